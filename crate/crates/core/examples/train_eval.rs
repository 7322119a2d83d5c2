//! Train a small LRC-WeatherNet on a synthetic set, save a checkpoint, reload
//! it and evaluate on held-out samples.
//!
//! Usage: `cargo run --release --example train_eval [per_class] [epochs]`

use lrc_weathernet::bev_raster::{FrustumSpec, GridSpec};
use lrc_weathernet::checkpoint::Checkpoint;
use lrc_weathernet::data::{stratified_split, PreparedSet};
use lrc_weathernet::synth::{default_profiles, generate_dataset_sized};
use lrc_weathernet::train::{evaluate, train, RunFiles, TrainConfig};

fn main() -> lrc_weathernet::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let per_class = args.next().unwrap_or(20);
    let epochs = args.next().unwrap_or(5);

    let grid = GridSpec { out_h: 64, out_w: 64, ..GridSpec::default() };
    let samples = generate_dataset_sized(&default_profiles(), per_class, 1, 64)?;
    let set = PreparedSet::from_triplets(&samples, &FrustumSpec::default(), &grid)?;
    let split = stratified_split(&set.labels(), 0.6, 0.2, 1)?;

    let dir = std::env::temp_dir().join("lrcw_train_eval");
    let run = RunFiles::new(&dir)?;
    let config = TrainConfig { feature_dim: 32, epochs, ..TrainConfig::default() };
    let out = train(&config, &set, &split.train, &split.val, Some(&run), |r| {
        println!(
            "epoch {:>2}  train loss {:.4} acc {:.3}  val loss {:.4} acc {:.3}  lr {:.1e}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.lr
        )
    })?;
    println!("best epoch {}", out.best_epoch);

    let loaded = Checkpoint::load(run.best())?;
    let (report, _) = evaluate(&loaded, &set, &split.test, 16)?;
    println!("test accuracy {:.3}, macro F1 {:.3}", report.accuracy, report.macro_f1);
    print!("{}", report.confusion_csv());
    println!("run files in {}", dir.display());
    Ok(())
}
