//! Train every model variant on the same split and compare test accuracy.
//!
//! Usage: `cargo run --release --example fusion_experiment [per_class] [epochs]`
//! The defaults (200 per class, 4 epochs) take several minutes on one core.

use lrc_weathernet::experiment::{run_experiment, ExperimentConfig};

fn main() -> lrc_weathernet::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let mut cfg = ExperimentConfig {
        per_class: args.next().unwrap_or(200),
        ..ExperimentConfig::default()
    };
    cfg.train.epochs = args.next().unwrap_or(4);

    let res = run_experiment(&cfg, None, |v, r| {
        println!("{v:<15} epoch {:>2}  val acc {:.3}", r.epoch, r.val_accuracy)
    })?;
    println!("\n{:<15} {:>8} {:>8} {:>8}", "variant", "test acc", "macro F1", "seconds");
    for r in &res.results {
        println!("{:<15} {:>8.4} {:>8.4} {:>8.0}", r.variant.name(), r.test.accuracy, r.test.macro_f1, r.seconds);
    }
    Ok(())
}
