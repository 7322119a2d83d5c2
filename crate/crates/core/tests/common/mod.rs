//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod grad;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use lrc_weathernet::bev_raster::{FrustumSpec, GridSpec};
use lrc_weathernet::rng::{stream, Purpose};
use lrc_weathernet::sensor_io::{LidarPoint, RadarPoint};

/// Cell index of `v` along one axis, found by walking cell edges
/// `i / cells_per_meter` rather than by flooring a product. The offset
/// `v - lo` of an f32 coordinate from an integral bound is exact in f64.
fn naive_index(v: f32, lo: f64, cells_per_meter: f64, n: usize) -> usize {
    let off = v as f64 - lo;
    let edge = |i: i64| i as f64 / cells_per_meter;
    let mut i = (off / (1.0 / cells_per_meter)) as i64;
    while i > 0 && edge(i) > off {
        i -= 1;
    }
    while edge(i + 1) <= off {
        i += 1;
    }
    (i.max(0) as usize).min(n - 1)
}

fn inside(x: f32, y: f32, f: &FrustumSpec) -> bool {
    let (x, y) = (x as f64, y as f64);
    !(x < f.x_min || x >= f.x_max || y < f.y_min || y >= f.y_max)
}

/// Straight per-point loop: `values(p)` for every point, kept as the
/// running maximum of its cell; untouched cells end at 0.
pub fn naive_grid<P>(
    cloud: &[P],
    f: &FrustumSpec,
    g: &GridSpec,
    xy: impl Fn(&P) -> (f32, f32),
    values: impl Fn(&P) -> Vec<f32>,
    channels: usize,
) -> Vec<f32> {
    let cpm = (1.0 / g.resolution).round();
    let h0 = ((f.x_max - f.x_min) * cpm).round() as usize;
    let w0 = ((f.y_max - f.y_min) * cpm).round() as usize;
    let mut cells: Vec<Option<Vec<f32>>> = vec![None; h0 * w0];
    for p in cloud {
        let (x, y) = xy(p);
        if !inside(x, y, f) {
            continue;
        }
        let r = naive_index(x, f.x_min, cpm, h0);
        let c = naive_index(y, f.y_min, cpm, w0);
        let v = values(p);
        match &mut cells[r * w0 + c] {
            Some(cur) => {
                for (a, b) in cur.iter_mut().zip(v) {
                    if b > *a {
                        *a = b;
                    }
                }
            }
            slot => *slot = Some(v),
        }
    }
    let mut out = vec![0.0f32; channels * h0 * w0];
    for (i, cell) in cells.iter().enumerate() {
        if let Some(v) = cell {
            for ch in 0..channels {
                out[ch * h0 * w0 + i] = v[ch];
            }
        }
    }
    out
}

pub fn naive_lidar(cloud: &[LidarPoint], f: &FrustumSpec, g: &GridSpec) -> Vec<f32> {
    naive_grid(cloud, f, g, |p| (p.x, p.y), |p| vec![p.intensity], 1)
}

pub fn naive_radar(cloud: &[RadarPoint], f: &FrustumSpec, g: &GridSpec) -> Vec<f32> {
    naive_grid(cloud, f, g, |p| (p.x, p.y), |p| vec![p.snr, p.rcs], 2)
}

/// Raster settings cycled through by the oracle tests. Resolutions have an
/// integral number of cells per meter.
pub fn raster_settings(i: usize) -> (FrustumSpec, GridSpec) {
    let grid = |resolution| GridSpec {
        resolution,
        ..GridSpec::default()
    };
    match i % 4 {
        0 | 1 => (FrustumSpec::default(), grid(0.1)),
        2 => (
            FrustumSpec {
                x_min: -10.0,
                x_max: 30.0,
                y_min: -20.0,
                y_max: 12.0,
            },
            grid(0.25),
        ),
        _ => (FrustumSpec::default(), grid(0.5)),
    }
}

/// A coordinate: mostly uniform over a margin around `[lo, hi)`, sometimes
/// exactly on a cell edge or a frustum bound.
fn coord(r: &mut ChaCha8Rng, lo: f64, hi: f64, res: f64) -> f32 {
    match r.gen_range(0..10) {
        0 => {
            let cells = ((hi - lo) / res).round() as i64;
            (lo + r.gen_range(0..=cells) as f64 * res) as f32
        }
        1 => [lo, hi][r.gen_range(0..2)] as f32,
        _ => r.gen_range(lo - 5.0..hi + 5.0) as f32,
    }
}

pub fn random_lidar(seed: u64, n: usize, f: &FrustumSpec, g: &GridSpec) -> Vec<LidarPoint> {
    let mut r = stream(seed, Purpose::Synth, 0x0_4ac1e);
    (0..n)
        .map(|_| LidarPoint {
            x: coord(&mut r, f.x_min, f.x_max, g.resolution),
            y: coord(&mut r, f.y_min, f.y_max, g.resolution),
            z: r.gen_range(-3.0..3.0),
            intensity: if r.gen_bool(0.05) { 0.0 } else { r.gen_range(0.0..1.0) },
        })
        .collect()
}

pub fn random_radar(seed: u64, n: usize, f: &FrustumSpec, g: &GridSpec) -> Vec<RadarPoint> {
    let mut r = stream(seed, Purpose::Synth, 0x0_4ad4);
    (0..n)
        .map(|_| RadarPoint {
            x: coord(&mut r, f.x_min, f.x_max, g.resolution),
            y: coord(&mut r, f.y_min, f.y_max, g.resolution),
            z: r.gen_range(-1.0..3.0),
            snr: r.gen_range(-10.0..40.0),
            rcs: r.gen_range(-30.0..20.0),
        })
        .collect()
}

pub fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}
