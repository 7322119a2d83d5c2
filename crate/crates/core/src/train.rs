//! Class-weighted training with AdamW, gradient clipping and a plateau
//! learning-rate schedule, plus batched evaluation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{make_batch, AugmentPlan, NormSource, NormStats, PreparedSet};
use crate::error::{Error, Result};
use crate::fusion_head::{argmax_rows, GateRecord, Network, Variant};
use crate::metrics::EvalReport;
use crate::nn::{clip_grad_norm, compute_class_weights, weighted_softmax_ce, AdamW, AdamWConfig, MacCount, Mode, Module, PlateauScheduler};
use crate::rng::{self, Purpose};
use crate::sensor_io::NUM_CLASSES;
use crate::synth::AugmentSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 3,
            threshold: 1e-4,
            min_lr: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub feature_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub clip_norm: f64,
    pub scheduler: SchedulerConfig,
    pub seed: u64,
    pub augment: AugmentSpec,
    pub normalization: NormSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::LrcWeathernet,
            feature_dim: 64,
            epochs: 10,
            batch_size: 16,
            optimizer: AdamWConfig::default(),
            clip_norm: 5.0,
            scheduler: SchedulerConfig::default(),
            seed: 0,
            augment: AugmentSpec::default(),
            normalization: NormSource::Dataset,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(o.weight_decay >= 0.0) || !(o.eps > 0.0) {
            return Err(Error::Config("lr and eps must be > 0, weight decay >= 0".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config("Adam betas must lie in [0,1)".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be >= 2 for batch normalization".into()));
        }
        if self.epochs == 0 || self.feature_dim == 0 {
            return Err(Error::Config("epochs and feature_dim must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be > 0".into()));
        }
        let s = &self.scheduler;
        if !(s.factor > 0.0 && s.factor < 1.0) || s.patience == 0 || !(s.min_lr >= 0.0) || !(s.threshold >= 0.0) {
            return Err(Error::Config("scheduler needs 0 < factor < 1, patience >= 1, min_lr >= 0".into()));
        }
        self.augment.validate()
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Lowest validation loss seen.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Files written below a run directory.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn best(&self) -> PathBuf {
        self.dir.join("best")
    }

    pub fn last(&self) -> PathBuf {
        self.dir.join("last")
    }

    pub fn history(&self) -> PathBuf {
        self.dir.join("history.csv")
    }
}

fn class_counts(set: &PreparedSet, indices: &[usize]) -> Vec<usize> {
    let mut counts = vec![0usize; NUM_CLASSES];
    for &i in indices {
        counts[set.samples[i].label] += 1;
    }
    counts
}

/// Weighted loss, correct count and weight sum over `indices` in eval mode.
fn eval_loss(
    network: &Network,
    set: &PreparedSet,
    indices: &[usize],
    norm: &NormStats,
    weights: &[f32],
    batch: usize,
) -> Result<(f64, f64)> {
    let parts = indices
        .par_chunks(batch)
        .map(|chunk| {
            let (input, labels) = make_batch(set, chunk, network.variant, norm, None)?;
            let (logits, _) = network.infer(&input)?;
            let (loss, _) = weighted_softmax_ce(&logits, &labels, weights)?;
            let wsum: f64 = labels.iter().map(|&t| weights[t] as f64).sum();
            let correct = argmax_rows(&logits).iter().zip(&labels).filter(|(p, t)| p == t).count();
            Ok((loss as f64 * wsum, wsum, correct))
        })
        .collect::<Result<Vec<_>>>()?;
    let (loss, wsum, correct) = parts
        .into_iter()
        .fold((0.0, 0.0, 0), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
    Ok((loss / wsum, correct as f64 / indices.len() as f64))
}

/// Train `config.variant` on `train_idx`, selecting the checkpoint with the
/// lowest validation loss. With `run` set, `best`, `last` and `history.csv`
/// are written there as training progresses.
pub fn train(
    config: &TrainConfig,
    set: &PreparedSet,
    train_idx: &[usize],
    val_idx: &[usize],
    run: Option<&RunFiles>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_idx.len() < 2 {
        return Err(Error::Empty("training split needs at least two samples"));
    }
    if val_idx.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let norm = match config.normalization {
        NormSource::Dataset => NormStats::from_set(set, train_idx)?,
        NormSource::Reference => NormStats::reference(),
    };
    let weights = compute_class_weights(&class_counts(set, train_idx))?;
    let mut network = Network::<f32>::new(config.variant, config.feature_dim, set.hw(), config.seed)?;
    let mut opt = AdamW::new(config.optimizer);
    let mut sched = PlateauScheduler::new(config.optimizer.lr);
    sched.factor = config.scheduler.factor;
    sched.patience = config.scheduler.patience;
    sched.threshold = config.scheduler.threshold;
    sched.min_lr = config.scheduler.min_lr;

    let snapshot = |network: &Network, opt: &AdamW| {
        let mut network = network.clone();
        network.zero_grad();
        Checkpoint {
            network,
            norm: norm.clone(),
            frustum: set.frustum,
            grid: set.grid,
            step: opt.step,
            lr: opt.config.lr,
        }
    };
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        opt.config.lr = sched.lr;
        let mut order = train_idx.to_vec();
        order.shuffle(&mut rng::stream(config.seed, Purpose::Shuffle, epoch as u64));
        let plan = AugmentPlan {
            spec: &config.augment,
            seed: config.seed,
            epoch,
        };
        let (mut loss_sum, mut wsum, mut correct, mut seen) = (0.0f64, 0.0f64, 0usize, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let (input, labels) = make_batch(set, chunk, config.variant, &norm, Some(plan))?;
            network.zero_grad();
            let mut drop_rng = rng::stream(config.seed, Purpose::Dropout, opt.step);
            let (logits, cache) = network.forward(&input, Mode::Train, &mut drop_rng)?;
            let (loss, dlogits) = weighted_softmax_ce(&logits, &labels, &weights)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            network.backward(&cache, &dlogits)?;
            let mut params = network.params_mut();
            clip_grad_norm(&mut params, config.clip_norm);
            opt.step(&mut params)?;
            let w: f64 = labels.iter().map(|&t| weights[t] as f64).sum();
            loss_sum += loss as f64 * w;
            wsum += w;
            correct += argmax_rows(&logits).iter().zip(&labels).filter(|(p, t)| p == t).count();
            seen += labels.len();
        }
        let (val_loss, val_accuracy) = eval_loss(&network, set, val_idx, &norm, &weights, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / wsum,
            train_accuracy: correct as f64 / seen as f64,
            val_loss,
            val_accuracy,
            lr: opt.config.lr,
        };
        sched.step(val_loss);
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            let ck = snapshot(&network, &opt);
            if let Some(run) = run {
                ck.save(run.best())?;
            }
            best = Some((val_loss, epoch, ck));
        }
        on_epoch(&record);
        history.push(record);
        if let Some(run) = run {
            let path = run.history();
            std::fs::write(&path, history_csv(&history)?).map_err(|e| Error::io(&path, e))?;
        }
    }
    let last = snapshot(&network, &opt);
    if let Some(run) = run {
        last.save(run.last())?;
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last,
        history,
    })
}

/// Per-sample predictions of an evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    /// Empty unless the network has a gated fusion stage.
    pub gates: Vec<GateRecord>,
}

pub fn predict(
    network: &Network,
    norm: &NormStats,
    set: &PreparedSet,
    indices: &[usize],
    batch: usize,
) -> Result<Predictions> {
    if indices.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let parts = indices
        .par_chunks(batch.max(1))
        .map(|chunk| {
            let (input, labels) = make_batch(set, chunk, network.variant, norm, None)?;
            let (logits, gates) = network.infer(&input)?;
            Ok((labels, argmax_rows(&logits), gates))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Predictions {
        indices: indices.to_vec(),
        labels: Vec::new(),
        predictions: Vec::new(),
        gates: Vec::new(),
    };
    for (l, p, g) in parts {
        out.labels.extend(l);
        out.predictions.extend(p);
        out.gates.extend(g);
    }
    Ok(out)
}

/// Eval-mode metrics of `checkpoint` on `indices` of `set`.
pub fn evaluate(checkpoint: &Checkpoint, set: &PreparedSet, indices: &[usize], batch: usize) -> Result<(EvalReport, Predictions)> {
    let network = &checkpoint.network;
    if network.input_hw() != set.hw() {
        return Err(Error::Shape(format!(
            "checkpoint expects {:?} inputs, data is {:?}",
            network.input_hw(),
            set.hw()
        )));
    }
    let preds = predict(network, &checkpoint.norm, set, indices, batch)?;
    let mut report = EvalReport::from_predictions(network.variant.name(), &preds.labels, &preds.predictions, NUM_CLASSES)?;
    let cost = crate::bench::report_model_cost(network)?;
    report.params = cost.params;
    report.macs = cost.macs;
    report.gmac = cost.gmac;
    Ok((report, preds))
}

/// Evaluate every index of `set`.
pub fn evaluate_all(checkpoint: &Checkpoint, set: &PreparedSet, batch: usize) -> Result<(EvalReport, Predictions)> {
    evaluate(checkpoint, set, &(0..set.len()).collect::<Vec<_>>(), batch)
}

/// Number of MACs of one sample-step; handy for sizing runs.
pub fn macs_per_sample(network: &Network) -> Result<u64> {
    let (h, w) = network.input_hw();
    network.macs(h, w)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
