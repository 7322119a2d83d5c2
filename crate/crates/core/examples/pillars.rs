//! Group a LiDAR cloud into vertical pillars and print the nine-feature
//! encoding of the busiest one.

use lrc_weathernet::bev_raster::{encode_pillars, FrustumSpec, GridSpec};
use lrc_weathernet::synth::{default_profiles, generate_sample};

fn main() {
    let f = FrustumSpec::default();
    let g = GridSpec { resolution: 0.5, ..GridSpec::default() };
    let s = generate_sample(&default_profiles()[1], 0, 5, 32);
    let pillars = encode_pillars(&s.lidar, &f, &g);
    let points: usize = pillars.iter().map(|p| p.features.len()).sum();
    println!("{} pillars hold {points} points", pillars.len());
    if let Some(p) = pillars.iter().max_by_key(|p| p.features.len()) {
        println!("busiest pillar at row {} col {}:", p.row, p.col);
        println!("      x       y       z     int      dx      dy      dz      xc      yc");
        for feat in p.features.iter().take(8) {
            let cols: Vec<String> = feat.iter().map(|v| format!("{v:7.3}")).collect();
            println!("{}", cols.join(" "));
        }
    }
}
