//! Rasterize a synthetic sample into LiDAR and RADAR bird's-eye-view grids,
//! resize them and stack the early-fusion input.

use lrc_weathernet::bev_raster::{
    channel_stats, early_fuse, frustum_filter, normalize, rasterize_lidar, rasterize_radar, resize_bilinear,
    FrustumSpec, GridSpec,
};
use lrc_weathernet::synth::{default_profiles, generate_sample};

fn main() -> lrc_weathernet::Result<()> {
    let f = FrustumSpec::default();
    let g = GridSpec::default();
    let s = generate_sample(&default_profiles()[0], 3, 11, 64);

    let kept = frustum_filter(&s.lidar, &f);
    println!("frustum keeps {} of {} lidar points", kept.len(), s.lidar.len());

    let lidar = rasterize_lidar(&s.lidar, &f, &g)?;
    let radar = rasterize_radar(&s.radar, &f, &g)?;
    let occupied = lidar.tensor.data().iter().filter(|v| **v > 0.0).count();
    println!("raw lidar grid {:?} ({:?}), {occupied} occupied cells", lidar.tensor.shape(), lidar.channels);
    println!("raw radar grid {:?} ({:?})", radar.tensor.shape(), radar.channels);

    let l = resize_bilinear(&lidar.tensor, g.out_h, g.out_w)?;
    let r = resize_bilinear(&radar.tensor, g.out_h, g.out_w)?;
    let fused = early_fuse(&l, &r)?;
    let (mean, std) = channel_stats(&[&fused])?;
    let normed = normalize(&fused, &mean, &std)?;
    println!("early-fusion input {:?}, channel means {mean:?}", normed.shape());
    Ok(())
}
