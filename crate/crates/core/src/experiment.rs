//! Train and test several model variants on one synthetic dataset split.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bev_raster::{FrustumSpec, GridSpec};
use crate::data::{stratified_split, PreparedSet, Split};
use crate::error::Result;
use crate::fusion_head::Variant;
use crate::metrics::EvalReport;
use crate::synth::{default_profiles, generate_dataset, ClassProfile};
use crate::train::{evaluate, train, EpochRecord, RunFiles, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub per_class: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub variants: Vec<Variant>,
    pub frustum: FrustumSpec,
    pub grid: GridSpec,
    /// Shared by every variant; its `variant` field is overridden.
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            per_class: 200,
            seed: 7,
            train_fraction: 0.6,
            val_fraction: 0.2,
            variants: Variant::ALL.to_vec(),
            frustum: FrustumSpec::default(),
            grid: GridSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct VariantResult {
    pub variant: Variant,
    pub test: EvalReport,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub split: Split,
    pub results: Vec<VariantResult>,
    pub prepare_seconds: f64,
}

impl ExperimentResult {
    pub fn accuracy(&self, v: Variant) -> Option<f64> {
        self.results.iter().find(|r| r.variant == v).map(|r| r.test.accuracy)
    }
}

/// Generate, rasterize and split the dataset once.
pub fn prepare_dataset(cfg: &ExperimentConfig, profiles: &[ClassProfile]) -> Result<(PreparedSet, Split)> {
    let samples = generate_dataset(profiles, cfg.per_class, cfg.seed)?;
    let set = PreparedSet::from_triplets(&samples, &cfg.frustum, &cfg.grid)?;
    let split = stratified_split(&set.labels(), cfg.train_fraction, cfg.val_fraction, cfg.seed)?;
    Ok((set, split))
}

/// Train each configured variant and score its best checkpoint on the test
/// split. Each variant gets its own sub-directory of `out` when given.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: Option<PathBuf>,
    mut log: impl FnMut(Variant, &EpochRecord),
) -> Result<ExperimentResult> {
    let t0 = Instant::now();
    let (set, split) = prepare_dataset(cfg, &default_profiles())?;
    let prepare_seconds = t0.elapsed().as_secs_f64();
    let mut results = Vec::new();
    for &variant in &cfg.variants {
        let t = Instant::now();
        let tc = TrainConfig {
            variant,
            ..cfg.train.clone()
        };
        let run = out.as_ref().map(|d| RunFiles::new(d.join(variant.name()))).transpose()?;
        let outcome = train(&tc, &set, &split.train, &split.val, run.as_ref(), |r| log(variant, r))?;
        let (test, _) = evaluate(&outcome.best, &set, &split.test, tc.batch_size)?;
        results.push(VariantResult {
            variant,
            test,
            history: outcome.history,
            best_epoch: outcome.best_epoch,
            seconds: t.elapsed().as_secs_f64(),
        });
    }
    Ok(ExperimentResult {
        split,
        results,
        prepare_seconds,
    })
}
