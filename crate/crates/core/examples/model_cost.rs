//! Parameter counts, multiply-accumulates and single-sample latency for
//! each variant at the default 224x224 input.

use lrc_weathernet::bench::{bench_latency, random_input, report_model_cost};
use lrc_weathernet::fusion_head::{Network, Variant};

fn main() -> lrc_weathernet::Result<()> {
    println!("{:<15} {:>10} {:>8} {:>9} {:>9}", "variant", "params", "GMAC", "mean ms", "p95 ms");
    for v in Variant::ALL {
        let net = Network::new(v, 64, (224, 224), 0)?;
        let cost = report_model_cost(&net)?;
        let lat = bench_latency(&net, &random_input(&net, 0), 5, 30)?;
        println!(
            "{:<15} {:>10} {:>8.3} {:>9.2} {:>9.2}",
            v.name(),
            cost.params,
            cost.gmac,
            lat.mean_ms,
            lat.p95_ms
        );
    }
    Ok(())
}
