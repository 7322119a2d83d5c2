//! Bird's-eye-view rasterization of LiDAR and RADAR point clouds.
//!
//! Points are cropped to a forward frustum, binned into a metric grid keeping
//! the per-cell maximum of each attribute, resized to the backbone input size
//! with half-pixel bilinear sampling, and normalized per channel.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor_io::{LidarPoint, PointRecord, RadarPoint};
use crate::tensor::Tensor;

/// LiDAR intensity statistics used for model-input normalization.
pub const LIDAR_MEAN: [f32; 1] = [0.0471];
pub const LIDAR_STD: [f32; 1] = [0.1659];
/// RADAR (SNR, RCS) statistics used for model-input normalization.
pub const RADAR_MEAN: [f32; 2] = [0.0072, 0.0040];
pub const RADAR_STD: [f32; 2] = [0.2507, 0.2326];
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

pub const LIDAR_CHANNELS: [&str; 1] = ["lidar_intensity"];
pub const RADAR_CHANNELS: [&str; 2] = ["radar_snr", "radar_rcs"];
pub const FUSED_CHANNELS: [&str; 3] = ["lidar_intensity", "radar_snr", "radar_rcs"];

/// Forward region of interest, half-open on both axes: `[min, max)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrustumSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for FrustumSpec {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 50.0,
            y_min: -25.0,
            y_max: 25.0,
        }
    }
}

impl FrustumSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !ok || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::InvalidArgument(format!("degenerate frustum {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, x: f32, y: f32) -> bool {
        let (x, y) = (x as f64, y as f64);
        self.x_min <= x && x < self.x_max && self.y_min <= y && y < self.y_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Meters per cell.
    pub resolution: f64,
    /// Output height after resizing.
    pub out_h: usize,
    /// Output width after resizing.
    pub out_w: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            out_h: 224,
            out_w: 224,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.out_h == 0 || self.out_w == 0 {
            return Err(Error::InvalidArgument("output dims must be >= 1".into()));
        }
        Ok(())
    }

    fn cells_per_meter(&self) -> f64 {
        1.0 / self.resolution
    }

    /// Raw grid extent `(H0, W0)`: rows follow x, columns follow y.
    pub fn raw_dims(&self, f: &FrustumSpec) -> (usize, usize) {
        let cells = |span: f64| {
            let n = span * self.cells_per_meter();
            // tolerate representation error in e.g. 50 / 0.1
            let r = n.round();
            let n = if (n - r).abs() < 1e-9 { r } else { n.ceil() };
            (n as usize).max(1)
        };
        (cells(f.x_max - f.x_min), cells(f.y_max - f.y_min))
    }
}

/// A rasterized grid with its spatial metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid {
    pub tensor: Tensor,
    pub frustum: FrustumSpec,
    pub grid: GridSpec,
    pub channels: Vec<String>,
}

pub fn frustum_filter<P: PointRecord>(cloud: &[P], f: &FrustumSpec) -> Vec<P> {
    cloud
        .iter()
        .filter(|p| {
            let (x, y) = p.xy();
            f.contains(x, y)
        })
        .copied()
        .collect()
}

/// Grid cell of a point inside the frustum, clamped to the raw grid.
pub fn cell_of(x: f32, y: f32, f: &FrustumSpec, g: &GridSpec) -> (usize, usize) {
    let (h0, w0) = g.raw_dims(f);
    let inv = g.cells_per_meter();
    let idx = |v: f32, lo: f64, n: usize| {
        let c = ((v as f64 - lo) * inv).floor();
        c.clamp(0.0, (n - 1) as f64) as usize
    };
    (idx(x, f.x_min, h0), idx(y, f.y_min, w0))
}

/// Per-cell maximum over channels. Cells without points stay 0, but an
/// occupied cell keeps its true maximum even when that maximum is negative.
fn max_scatter<P: PointRecord>(
    cloud: &[P],
    f: &FrustumSpec,
    g: &GridSpec,
    channels: usize,
    value: impl Fn(&P, usize) -> f32,
) -> Tensor {
    let (h0, w0) = g.raw_dims(f);
    let plane = h0 * w0;
    let mut data = vec![f32::NEG_INFINITY; channels * plane];
    let mut occupied = vec![false; plane];
    for p in cloud {
        let (x, y) = p.xy();
        if !f.contains(x, y) {
            continue;
        }
        let (r, c) = cell_of(x, y, f, g);
        let cell = r * w0 + c;
        occupied[cell] = true;
        for ch in 0..channels {
            let slot = &mut data[ch * plane + cell];
            *slot = slot.max(value(p, ch));
        }
    }
    for ch in 0..channels {
        for (v, occ) in data[ch * plane..(ch + 1) * plane].iter_mut().zip(&occupied) {
            if !occ {
                *v = 0.0;
            }
        }
    }
    Tensor::new(vec![channels, h0, w0], data).expect("grid shape")
}

/// `[1,H0,W0]` grid of per-cell maximum LiDAR intensity.
pub fn rasterize_lidar(cloud: &[LidarPoint], f: &FrustumSpec, g: &GridSpec) -> Result<BevGrid> {
    f.validate()?;
    g.validate()?;
    if let Some((index, p)) = cloud
        .iter()
        .enumerate()
        .find(|(_, p)| p.intensity < 0.0 || !p.intensity.is_finite())
    {
        return Err(Error::NegativeIntensity {
            index,
            value: p.intensity,
        });
    }
    Ok(BevGrid {
        tensor: max_scatter(cloud, f, g, 1, |p, _| p.intensity),
        frustum: *f,
        grid: *g,
        channels: LIDAR_CHANNELS.iter().map(|s| s.to_string()).collect(),
    })
}

/// `[2,H0,W0]` grid: channel 0 per-cell max SNR, channel 1 per-cell max RCS.
pub fn rasterize_radar(cloud: &[RadarPoint], f: &FrustumSpec, g: &GridSpec) -> Result<BevGrid> {
    f.validate()?;
    g.validate()?;
    Ok(BevGrid {
        tensor: max_scatter(cloud, f, g, 2, |p, ch| if ch == 0 { p.snr } else { p.rcs }),
        frustum: *f,
        grid: *g,
        channels: RADAR_CHANNELS.iter().map(|s| s.to_string()).collect(),
    })
}

/// Sampling taps for one axis: `(lower index, upper index, fraction)`.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f32 / dst as f32;
    (0..dst)
        .map(|d| {
            let s = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f32);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f32)
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    let v = a + (b - a) * t;
    v.clamp(a.min(b), a.max(b))
}

/// Half-pixel-centre bilinear resize of every channel of a `[C,H0,W0]` tensor
/// with edge clamping.
pub fn resize_bilinear(grid: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, h0, w0) = match grid.shape() {
        [c, h0, w0] => (*c, *h0, *w0),
        s => return Err(Error::Shape(format!("resize needs [C,H,W], got {s:?}"))),
    };
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("resize target must be >= 1".into()));
    }
    if (h, w) == (h0, w0) {
        return Ok(grid.clone());
    }
    let rows = axis_taps(h0, h);
    let cols = axis_taps(w0, w);
    let src = grid.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = &src[ch * h0 * w0..(ch + 1) * h0 * w0];
        for &(r0, r1, fy) in &rows {
            let top = &plane[r0 * w0..(r0 + 1) * w0];
            let bottom = &plane[r1 * w0..(r1 + 1) * w0];
            for &(c0, c1, fx) in &cols {
                let a = lerp(top[c0], top[c1], fx);
                let b = lerp(bottom[c0], bottom[c1], fx);
                out.push(lerp(a, b, fy));
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// `(x - mean[c]) / std[c]` for each channel of a `[C,...]` tensor.
pub fn normalize(t: &Tensor, mean: &[f32], std: &[f32]) -> Result<Tensor> {
    let c = t.shape()[0];
    if mean.len() != c || std.len() != c {
        return Err(Error::Shape(format!(
            "normalize: {c} channels but {} means / {} stds",
            mean.len(),
            std.len()
        )));
    }
    if let Some(s) = std.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidArgument(format!("std must be positive, got {s}")));
    }
    let mut out = t.clone();
    normalize_in_place(&mut out, mean, std);
    Ok(out)
}

pub(crate) fn normalize_in_place(t: &mut Tensor, mean: &[f32], std: &[f32]) {
    let c = t.shape()[0];
    let plane = t.len() / c;
    for (ch, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        let (m, s) = (mean[ch], std[ch]);
        chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
}

/// Per-channel mean and (population) standard deviation over a set of
/// `[C,H,W]` tensors.
pub fn channel_stats(tensors: &[&Tensor]) -> Result<(Vec<f32>, Vec<f32>)> {
    let first = tensors.first().ok_or(Error::Empty("channel_stats"))?;
    let c = first.shape()[0];
    let mut sum = vec![0f64; c];
    let mut sq = vec![0f64; c];
    let mut n = 0usize;
    for t in tensors {
        if t.shape()[0] != c {
            return Err(Error::Shape("channel count differs between tensors".into()));
        }
        let plane = t.len() / c;
        for (ch, chunk) in t.data().chunks(plane).enumerate() {
            for &v in chunk {
                sum[ch] += v as f64;
                sq[ch] += (v as f64) * (v as f64);
            }
        }
        n += plane;
    }
    let mean: Vec<f32> = sum.iter().map(|s| (s / n as f64) as f32).collect();
    let std = sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| {
            let m = s / n as f64;
            ((q / n as f64 - m * m).max(0.0).sqrt() as f32).max(1e-6)
        })
        .collect();
    Ok((mean, std))
}

/// Channel-wise concatenation `[lidar, snr, rcs]` of equally sized grids.
pub fn early_fuse(lidar: &Tensor, radar: &Tensor) -> Result<Tensor> {
    match (lidar.shape(), radar.shape()) {
        ([1, h, w], [2, h2, w2]) if h == h2 && w == w2 => {
            let mut data = Vec::with_capacity(3 * h * w);
            data.extend_from_slice(lidar.data());
            data.extend_from_slice(radar.data());
            Tensor::new(vec![3, *h, *w], data)
        }
        (l, r) => Err(Error::Shape(format!(
            "early fusion needs [1,H,W] and [2,H,W], got {l:?} and {r:?}"
        ))),
    }
}

/// Resized (not yet normalized) LiDAR `[1,H,W]` and RADAR `[2,H,W]` inputs.
pub fn bev_inputs(
    lidar: &[LidarPoint],
    radar: &[RadarPoint],
    f: &FrustumSpec,
    g: &GridSpec,
) -> Result<(Tensor, Tensor)> {
    let l = rasterize_lidar(lidar, f, g)?;
    let r = rasterize_radar(radar, f, g)?;
    Ok((
        resize_bilinear(&l.tensor, g.out_h, g.out_w)?,
        resize_bilinear(&r.tensor, g.out_h, g.out_w)?,
    ))
}

/// Nine-feature point encoding:
/// `x, y, z, intensity, dx, dy, dz` (offsets from the pillar mean) and
/// `xc, yc` (offsets from the pillar's x-y centre).
pub type PillarFeature = [f32; 9];

#[derive(Clone, Debug, PartialEq)]
pub struct Pillar {
    pub row: usize,
    pub col: usize,
    pub features: Vec<PillarFeature>,
}

/// Group in-frustum points by grid cell and compute their pillar features.
/// Pillars are ordered by `(row, col)`; points keep input order.
pub fn encode_pillars(cloud: &[LidarPoint], f: &FrustumSpec, g: &GridSpec) -> Vec<Pillar> {
    let mut groups: BTreeMap<(usize, usize), Vec<&LidarPoint>> = BTreeMap::new();
    for p in cloud.iter().filter(|p| f.contains(p.x, p.y)) {
        groups.entry(cell_of(p.x, p.y, f, g)).or_default().push(p);
    }
    groups
        .into_iter()
        .map(|((row, col), pts)| {
            let n = pts.len() as f64;
            let mean = |sel: fn(&LidarPoint) -> f32| pts.iter().map(|p| sel(p) as f64).sum::<f64>() / n;
            let (mx, my, mz) = (mean(|p| p.x), mean(|p| p.y), mean(|p| p.z));
            let cx = (row as f64 + 0.5) * g.resolution + f.x_min;
            let cy = (col as f64 + 0.5) * g.resolution + f.y_min;
            let features = pts
                .iter()
                .map(|p| {
                    let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
                    [
                        p.x,
                        p.y,
                        p.z,
                        p.intensity,
                        (x - mx) as f32,
                        (y - my) as f32,
                        (z - mz) as f32,
                        (x - cx) as f32,
                        (y - cy) as f32,
                    ]
                })
                .collect();
            Pillar { row, col, features }
        })
        .collect()
}
