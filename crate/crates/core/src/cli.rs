//! The `lrcw` command line: `synth`, `rasterize`, `train`, `eval`, `bench`
//! and `inspect`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure during training. Diagnostics go to standard error;
//! results are written to files.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{bench_latency, random_input, report_model_cost, LatencyStats, ModelCost};
use crate::bev_raster::{bev_inputs, early_fuse, FrustumSpec, GridSpec};
use crate::checkpoint::{checkpoint_paths, Checkpoint, CheckpointIndex};
use crate::data::{stratified_split, NormSource, PreparedSet};
use crate::error::{Error, Result};
use crate::fusion_head::{write_gates, GateRow, Variant};
use crate::nn::AdamWConfig;
use crate::sensor_io::{
    decode_tensor, filter_synchronized, read_ppm, read_points, write_tensor, LidarPoint, Manifest,
    RadarPoint, BEVT_VERSION, DEFAULT_SYNC_TOLERANCE_US,
};
use crate::synth::{
    default_profiles, generate_dataset_sized, load_profiles, write_dataset, AugmentSpec, IMAGE_SIZE,
};
use crate::train::{evaluate, history_csv, train, write_text, RunFiles, SchedulerConfig, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Set to a non-empty value other than `0` for progress output.
pub const VERBOSE_ENV: &str = "LRCW_VERBOSE";

#[derive(Debug, Parser)]
#[command(name = "lrcw", version, about = "LiDAR/RADAR/camera weather classification")]
pub struct Cli {
    /// Worker threads for data preparation and evaluation; 1 is the
    /// bit-reproducible reference mode.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Print progress to standard error.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic nine-class dataset with a JSON-lines manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Run configuration; only its `profiles` entry is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        /// Class profile table; overrides the config's.
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long, default_value_t = IMAGE_SIZE)]
        image_size: usize,
    },
    /// Rasterize every manifest entry into a cached `[3,H,W]` BEV tensor.
    Rasterize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one model variant on a dataset directory or manifest.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `model.variant` of the config.
        #[arg(long)]
        variant: Option<Variant>,
        /// Overrides `train.epochs` of the config.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Gate summary CSV for gated models; defaults to `gates.csv` next
        /// to the report.
        #[arg(long)]
        gates: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Measure single-sample inference latency of a checkpoint.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the header of a tensor, checkpoint, image, cloud or manifest.
    Inspect {
        file: PathBuf,
        /// Record layout of a `.bin` point cloud.
        #[arg(long, value_enum)]
        kind: Option<CloudKind>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CloudKind {
    Lidar,
    Radar,
}

impl clap::ValueEnum for Variant {
    fn value_variants<'a>() -> &'a [Self] {
        &Variant::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub feature_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: Variant::LrcWeathernet,
            feature_dim: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub clip_norm: f64,
    pub scheduler: SchedulerConfig,
    pub normalization: NormSource,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub sync_tolerance_us: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            clip_norm: t.clip_norm,
            scheduler: t.scheduler,
            normalization: t.normalization,
            train_fraction: 0.6,
            val_fraction: 0.2,
            sync_tolerance_us: DEFAULT_SYNC_TOLERANCE_US,
        }
    }
}

/// JSON run configuration. Every key is optional; unknown keys are errors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub frustum: FrustumSpec,
    pub grid: GridSpec,
    pub model: ModelSection,
    pub train: TrainSection,
    pub augment: AugmentSpec,
    /// Class profile table for `synth`; the shipped table when absent.
    pub profiles: Option<PathBuf>,
    /// Filled from `--seed` when the effective config is written.
    pub seed: u64,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::read)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            variant: self.model.variant,
            feature_dim: self.model.feature_dim,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            optimizer: self.train.optimizer,
            clip_norm: self.train.clip_norm,
            scheduler: self.train.scheduler.clone(),
            seed: self.seed,
            augment: self.augment.clone(),
            normalization: self.train.normalization,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.frustum.validate().map_err(cfg)?;
        self.grid.validate().map_err(cfg)?;
        let t = &self.train;
        if !(t.train_fraction > 0.0 && t.val_fraction > 0.0 && t.train_fraction + t.val_fraction < 1.0) {
            return Err(Error::Config("split fractions must be positive and leave room for a test split".into()));
        }
        self.train_config().validate()
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        e if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

struct Ctx {
    seed: u64,
    verbose: bool,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// A dataset directory holding `manifest.jsonl`, or a manifest file.
fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.jsonl")
    } else {
        data.to_path_buf()
    }
}

#[derive(Serialize)]
struct SynthRecord<'a> {
    per_class: usize,
    seed: u64,
    image_size: usize,
    profiles: &'a Option<PathBuf>,
    samples: usize,
}

fn cmd_synth(ctx: &Ctx, out: &Path, per_class: usize, profiles: &Option<PathBuf>, image_size: usize) -> Result<()> {
    let table = match profiles {
        Some(p) => load_profiles(p).map_err(|e| match e {
            Error::Io { .. } | Error::Json(_) => Error::Config(e.to_string()),
            e => e,
        })?,
        None => default_profiles(),
    };
    create_dir(out)?;
    let samples = generate_dataset_sized(&table, per_class, ctx.seed, image_size)?;
    let manifest = write_dataset(out, &samples)?;
    write_json(&out.join("profiles.json"), &table)?;
    write_json(
        &out.join("synth_config.json"),
        &SynthRecord {
            per_class,
            seed: ctx.seed,
            image_size,
            profiles,
            samples: manifest.len(),
        },
    )?;
    ctx.log(format!("wrote {} samples to {}", manifest.len(), out.display()));
    Ok(())
}

/// Hex digest identifying a rasterization: settings plus manifest content.
pub fn cache_key(frustum: &FrustumSpec, grid: &GridSpec, manifest: &Manifest) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(frustum, grid))?);
    for e in &manifest.entries {
        h.update(serde_json::to_vec(e)?);
    }
    h.update(manifest.root.to_string_lossy().as_bytes());
    Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
}

fn cmd_rasterize(ctx: &Ctx, manifest: &Path, out: &Path, config: &RunConfig) -> Result<PathBuf> {
    let m = Manifest::read(manifest)?;
    if m.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    let key = cache_key(&config.frustum, &config.grid, &m)?;
    let dir = out.join(&key);
    create_dir(&dir)?;
    write_json(&dir.join("config.json"), config)?;
    use rayon::prelude::*;
    (0..m.len()).into_par_iter().try_for_each(|i| -> Result<()> {
        let e = &m.entries[i];
        let lidar: Vec<LidarPoint> = read_points(m.resolve(&e.lidar))?;
        let radar: Vec<RadarPoint> = read_points(m.resolve(&e.radar))?;
        let (l, r) = bev_inputs(&lidar, &radar, &config.frustum, &config.grid)?;
        write_tensor(dir.join(format!("{i:06}.bevt")), &early_fuse(&l, &r)?)
    })?;
    ctx.log(format!("rasterized {} samples into {}", m.len(), dir.display()));
    Ok(dir)
}

fn load_prepared(ctx: &Ctx, manifest: &Path, frustum: &FrustumSpec, grid: &GridSpec, tolerance: u64) -> Result<PreparedSet> {
    let m = Manifest::read(manifest)?;
    let synced = filter_synchronized(&m, tolerance);
    if synced.len() < m.len() {
        ctx.log(format!("dropped {} unsynchronized samples", m.len() - synced.len()));
    }
    if synced.is_empty() {
        return Err(Error::Empty("manifest has no synchronized samples"));
    }
    PreparedSet::from_manifest(&synced, frustum, grid)
}

fn write_split_manifest(path: &Path, m: &Manifest, idx: &[usize]) -> Result<()> {
    let abs = m.with_absolute_paths();
    let entries = idx.iter().map(|&i| abs.entries[i].clone()).collect();
    Manifest::new(entries, m.root.clone()).write(path)
}

fn cmd_train(ctx: &Ctx, config: RunConfig, data: &Path, out: &Path) -> Result<()> {
    config.validate()?;
    let run = RunFiles::new(out)?;
    write_json(&out.join("config.json"), &config)?;
    let mpath = manifest_path(data);
    let set = load_prepared(ctx, &mpath, &config.frustum, &config.grid, config.train.sync_tolerance_us)?;
    let split = stratified_split(&set.labels(), config.train.train_fraction, config.train.val_fraction, config.seed)?;
    write_json(&out.join("split.json"), &split)?;
    let synced = filter_synchronized(&Manifest::read(&mpath)?, config.train.sync_tolerance_us);
    for (name, idx) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        write_split_manifest(&out.join(format!("{name}_manifest.jsonl")), &synced, idx)?;
    }
    let tc = config.train_config();
    let outcome = train(&tc, &set, &split.train, &split.val, Some(&run), |r| {
        ctx.log(format!(
            "epoch {:>3}  train {:.4} ({:.3})  val {:.4} ({:.3})  lr {:.2e}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.lr
        ))
    })?;
    write_text(run.history(), &history_csv(&outcome.history)?)?;
    ctx.log(format!("best epoch {} written to {}", outcome.best_epoch, run.best().display()));
    Ok(())
}

fn cmd_eval(ctx: &Ctx, checkpoint: &Path, manifest: &Path, report: &Path, gates: Option<&Path>, batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(Error::InvalidArgument("--batch must be >= 1".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let m = Manifest::read(manifest)?;
    if m.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    let set = PreparedSet::from_manifest(&m, &ck.frustum, &ck.grid)?;
    let (rep, preds) = evaluate(&ck, &set, &(0..set.len()).collect::<Vec<_>>(), batch)?;
    rep.write_json(report)?;
    write_text(report.with_extension("confusion.csv"), &rep.confusion_csv())?;
    if !preds.gates.is_empty() {
        let gates_csv = gates.map(Path::to_path_buf).unwrap_or_else(|| report.with_file_name("gates.csv"));
        let rows: Vec<GateRow> = preds
            .gates
            .iter()
            .enumerate()
            .map(|(i, g)| GateRow {
                sample_id: preds.indices[i],
                label: preds.labels[i],
                prediction: preds.predictions[i],
                record: g.clone(),
            })
            .collect();
        write_gates(&gates_csv, Some(&gates_csv.with_extension("bevt")), &rows)?;
    }
    ctx.log(format!("accuracy {:.4}  macro-F1 {:.4}", rep.accuracy, rep.macro_f1));
    Ok(())
}

#[derive(Serialize)]
struct BenchRecord {
    variant: Variant,
    latency: LatencyStats,
    cost: ModelCost,
}

fn cmd_bench(ctx: &Ctx, checkpoint: &Path, iters: usize, warmup: usize, report: Option<&Path>) -> Result<()> {
    if iters == 0 {
        return Err(Error::InvalidArgument("--iters must be >= 1".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let input = random_input(&ck.network, ctx.seed);
    let latency = bench_latency(&ck.network, &input, warmup, iters)?;
    let cost = report_model_cost(&ck.network)?;
    println!(
        "{}: mean {:.3} ms  p50 {:.3} ms  p95 {:.3} ms  params {}  GMAC {:.4}",
        ck.network.variant, latency.mean_ms, latency.p50_ms, latency.p95_ms, cost.params, cost.gmac
    );
    if let Some(p) = report {
        write_json(
            p,
            &BenchRecord {
                variant: ck.network.variant,
                latency,
                cost,
            },
        )?;
    }
    Ok(())
}

/// One-line description of a file for `inspect`.
pub fn describe(file: &Path, kind: Option<CloudKind>) -> Result<String> {
    let read = || std::fs::read(file).map_err(|e| Error::io(file, e));
    let ext = file.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "bevt" => {
            let t = decode_tensor(&read()?)?;
            Ok(format!("BEVT v{BEVT_VERSION} dtype f32 shape {:?}", t.shape()))
        }
        "ppm" => {
            let t = read_ppm(file)?;
            Ok(format!("PPM P6 {}x{} (3 channels)", t.shape()[2], t.shape()[1]))
        }
        "jsonl" => {
            let m = Manifest::read(file)?;
            let mut counts = [0usize; crate::sensor_io::NUM_CLASSES];
            m.entries.iter().for_each(|e| counts[e.label] += 1);
            Ok(format!("manifest: {} entries, per-class counts {counts:?}", m.len()))
        }
        "json" => {
            let text = String::from_utf8_lossy(&read()?).into_owned();
            let index: CheckpointIndex = serde_json::from_str(&text).map_err(|e| Error::Malformed {
                path: file.to_path_buf(),
                reason: format!("not a checkpoint index: {e}"),
            })?;
            let ck = Checkpoint::load(checkpoint_paths(file).0)?;
            Ok(format!(
                "checkpoint {} d={} input {:?} step {} tensors {} params {}",
                index.variant,
                index.feature_dim,
                index.input_hw,
                index.step,
                index.entries.len(),
                crate::nn::count_params(&ck.network)
            ))
        }
        "bin" => match kind {
            Some(CloudKind::Lidar) => Ok(format!("LiDAR cloud: {} points", read_points::<LidarPoint>(file)?.len())),
            Some(CloudKind::Radar) => Ok(format!("RADAR cloud: {} points", read_points::<RadarPoint>(file)?.len())),
            None => Err(Error::InvalidArgument("point cloud files need --kind lidar|radar".into())),
        },
        _ => Err(Error::InvalidArgument(format!("cannot inspect {}", file.display()))),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        verbose: cli.verbose || std::env::var(VERBOSE_ENV).is_ok_and(|v| !v.is_empty() && v != "0"),
    };
    match cli.command {
        Command::Synth {
            out,
            config,
            per_class,
            profiles,
            image_size,
        } => {
            let profiles = profiles.or(RunConfig::load(config.as_deref())?.profiles);
            cmd_synth(&ctx, &out, per_class, &profiles, image_size)
        }
        Command::Rasterize { manifest, out, config } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            cfg.seed = ctx.seed;
            cfg.validate()?;
            cmd_rasterize(&ctx, &manifest, &out, &cfg).map(|_| ())
        }
        Command::Train {
            config,
            data,
            out,
            variant,
            epochs,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            cfg.seed = ctx.seed;
            if let Some(v) = variant {
                cfg.model.variant = v;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cmd_train(&ctx, cfg, &data, &out)
        }
        Command::Eval {
            checkpoint,
            manifest,
            report,
            gates,
            batch,
        } => cmd_eval(&ctx, &checkpoint, &manifest, &report, gates.as_deref(), batch),
        Command::Bench {
            checkpoint,
            iters,
            warmup,
            report,
        } => cmd_bench(&ctx, &checkpoint, iters, warmup, report.as_deref()),
        Command::Inspect { file, kind } => {
            println!("{}", describe(&file, kind)?);
            Ok(())
        }
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if cli.workers == 0 {
        eprintln!("error: --workers must be >= 1");
        return EXIT_USAGE;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
