//! Synthetic nine-class LiDAR/RADAR/camera scenes and the training-time
//! camera and RADAR augmentations.
//!
//! Every class draws its three modalities from a [`ClassProfile`]. The
//! shipped profile table (`config/profiles.json`) makes classes 3/4 and 5/6
//! share one image distribution, makes classes 1/2 and 7/8 share identical
//! LiDAR and RADAR distributions, and separates classes 0/1 in the image
//! only by a small brightness offset. No single modality can therefore
//! resolve every class, while the combination can.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bev_raster::resize_bilinear;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::sensor_io::{
    write_points, write_ppm, LidarPoint, Manifest, ManifestEntry, RadarPoint, SampleTriplet,
    NUM_CLASSES,
};
use crate::tensor::Tensor;

pub const DEFAULT_PROFILES_JSON: &str = include_str!("../config/profiles.json");
pub const IMAGE_SIZE: usize = 224;
/// Spacing between consecutive synthetic captures.
pub const FRAME_PERIOD_US: i64 = 100_000;
/// Largest offset of the RADAR and camera stamps from the LiDAR stamp.
pub const MAX_SENSOR_SKEW_US: i64 = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Informative {
    Camera,
    Geometry,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarProfile {
    /// Inclusive point-count range.
    pub count: [usize; 2],
    pub intensity_mean: f64,
    pub intensity_std: f64,
    pub z_mean: f64,
    pub z_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarProfile {
    pub count: [usize; 2],
    pub snr_mean: f64,
    pub snr_std: f64,
    pub rcs_mean: f64,
    pub rcs_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageProfile {
    /// Hue on the unit circle, `[0,1)`.
    pub hue: f64,
    pub hue_std: f64,
    pub saturation: f64,
    pub brightness: f64,
    pub brightness_std: f64,
    /// Relative amplitude of the sinusoidal texture.
    pub texture_contrast: f64,
    /// Texture cycles across the image width.
    pub texture_freq: f64,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub class_id: usize,
    pub name: String,
    pub informative: Informative,
    pub lidar: LidarProfile,
    pub radar: RadarProfile,
    pub image: ImageProfile,
}

impl ClassProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::Config(format!(
                "profile {} ({}): {what}",
                self.class_id, self.name
            )))
        };
        for (name, [lo, hi]) in [("lidar", self.lidar.count), ("radar", self.radar.count)] {
            if lo == 0 || lo > hi {
                return bad(&format!("{name} count range must be positive and ordered"));
            }
        }
        let stds = [
            self.lidar.intensity_std,
            self.lidar.z_std,
            self.radar.snr_std,
            self.radar.rcs_std,
            self.image.hue_std,
            self.image.brightness_std,
            self.image.noise_std,
        ];
        if stds.iter().any(|s| !(*s >= 0.0)) {
            return bad("standard deviations must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.image.saturation) || !(self.image.texture_contrast >= 0.0) {
            return bad("saturation must lie in [0,1] and texture contrast be >= 0");
        }
        Ok(())
    }
}

/// Parse and check a profile table: exactly one profile per class id.
pub fn parse_profiles(json: &str) -> Result<Vec<ClassProfile>> {
    let mut profiles: Vec<ClassProfile> = serde_json::from_str(json)?;
    profiles.sort_by_key(|p| p.class_id);
    if profiles.len() != NUM_CLASSES || profiles.iter().enumerate().any(|(i, p)| p.class_id != i) {
        return Err(Error::Config(format!(
            "profile table must list class ids 0..{} exactly once",
            NUM_CLASSES - 1
        )));
    }
    for p in &profiles {
        p.validate()?;
    }
    Ok(profiles)
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<ClassProfile>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profiles(&text)
}

pub fn default_profiles() -> Vec<ClassProfile> {
    parse_profiles(DEFAULT_PROFILES_JSON).expect("shipped profile table is valid")
}

/// Class groups that a single modality cannot tell apart.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ambiguity {
    pub camera: Vec<Vec<usize>>,
    pub lidar: Vec<Vec<usize>>,
    pub radar: Vec<Vec<usize>>,
    /// LiDAR and RADAR jointly.
    pub geometry: Vec<Vec<usize>>,
}

fn group_by<K: PartialEq>(profiles: &[ClassProfile], key: impl Fn(&ClassProfile) -> K) -> Vec<Vec<usize>> {
    let mut groups: Vec<(K, Vec<usize>)> = Vec::new();
    for p in profiles {
        let k = key(p);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, members)) => members.push(p.class_id),
            None => groups.push((k, vec![p.class_id])),
        }
    }
    groups.into_iter().map(|(_, m)| m).collect()
}

/// Group classes whose per-modality distributions are identical.
pub fn ambiguity_structure(profiles: &[ClassProfile]) -> Ambiguity {
    Ambiguity {
        camera: group_by(profiles, |p| p.image.clone()),
        lidar: group_by(profiles, |p| p.lidar.clone()),
        radar: group_by(profiles, |p| p.radar.clone()),
        geometry: group_by(profiles, |p| (p.lidar.clone(), p.radar.clone())),
    }
}

impl Ambiguity {
    /// Highest balanced accuracy reachable when every class in a group looks
    /// the same: one correct class per group.
    pub fn ceiling(groups: &[Vec<usize>]) -> f64 {
        let classes: usize = groups.iter().map(Vec::len).sum();
        groups.len() as f64 / classes as f64
    }
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).expect("validated std")
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn quantize(v: f64) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0
}

/// Textured colour field, quantized to 8-bit levels so it survives a PPM
/// round trip unchanged.
pub fn synth_image<R: Rng + ?Sized>(p: &ImageProfile, size: usize, rng: &mut R) -> Tensor {
    let hue = p.hue + normal(0.0, p.hue_std).sample(rng);
    let value = normal(p.brightness, p.brightness_std).sample(rng).clamp(0.05, 0.95);
    let base = hsv_to_rgb(hue, p.saturation, value);
    let theta = rng.gen_range(0.0..PI);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let freq = p.texture_freq * rng.gen_range(0.8..1.25) * 2.0 * PI / size as f64;
    let (ct, st) = (theta.cos(), theta.sin());
    let noise = normal(0.0, p.noise_std);
    let plane = size * size;
    let mut data = vec![0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let wave = 1.0 + p.texture_contrast * (freq * (x as f64 * ct + y as f64 * st) + phase).sin();
            for (c, b) in base.iter().enumerate() {
                data[c * plane + y * size + x] = quantize(b * wave + noise.sample(rng));
            }
        }
    }
    Tensor::new(vec![3, size, size], data).expect("image shape")
}

fn synth_lidar<R: Rng + ?Sized>(p: &LidarProfile, rng: &mut R) -> Vec<LidarPoint> {
    let n = rng.gen_range(p.count[0]..=p.count[1]);
    let (inten, z) = (normal(p.intensity_mean, p.intensity_std), normal(p.z_mean, p.z_std));
    (0..n)
        .map(|_| LidarPoint {
            x: rng.gen_range(-2.0f32..52.0),
            y: rng.gen_range(-27.0f32..27.0),
            z: z.sample(rng) as f32,
            intensity: inten.sample(rng).max(0.0) as f32,
        })
        .collect()
}

fn synth_radar<R: Rng + ?Sized>(p: &RadarProfile, rng: &mut R) -> Vec<RadarPoint> {
    let n = rng.gen_range(p.count[0]..=p.count[1]);
    let (snr, rcs) = (normal(p.snr_mean, p.snr_std), normal(p.rcs_mean, p.rcs_std));
    (0..n)
        .map(|_| RadarPoint {
            x: rng.gen_range(-2.0f32..52.0),
            y: rng.gen_range(-27.0f32..27.0),
            z: rng.gen_range(-0.5f32..2.0),
            snr: snr.sample(rng) as f32,
            rcs: rcs.sample(rng) as f32,
        })
        .collect()
}

/// Sample number `index` of the dataset drawn from `profile`.
pub fn generate_sample(profile: &ClassProfile, index: u64, seed: u64, image_size: usize) -> SampleTriplet {
    let mut rng = rng::stream(seed, Purpose::Synth, index);
    let lidar = synth_lidar(&profile.lidar, &mut rng);
    let radar = synth_radar(&profile.radar, &mut rng);
    let image = synth_image(&profile.image, image_size, &mut rng);
    let t_lidar = index as i64 * FRAME_PERIOD_US;
    SampleTriplet {
        lidar,
        radar,
        image,
        t_lidar,
        t_radar: t_lidar + rng.gen_range(-MAX_SENSOR_SKEW_US..=MAX_SENSOR_SKEW_US),
        t_camera: t_lidar + rng.gen_range(-MAX_SENSOR_SKEW_US..=MAX_SENSOR_SKEW_US),
        label: profile.class_id,
    }
}

/// `n_per_class` samples of every class, ordered class-major.
pub fn generate_dataset(profiles: &[ClassProfile], n_per_class: usize, seed: u64) -> Result<Vec<SampleTriplet>> {
    generate_dataset_sized(profiles, n_per_class, seed, IMAGE_SIZE)
}

pub fn generate_dataset_sized(
    profiles: &[ClassProfile],
    n_per_class: usize,
    seed: u64,
    image_size: usize,
) -> Result<Vec<SampleTriplet>> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("samples per class must be >= 1".into()));
    }
    if image_size == 0 {
        return Err(Error::InvalidArgument("image size must be >= 1".into()));
    }
    Ok((0..profiles.len() * n_per_class)
        .into_par_iter()
        .map(|i| generate_sample(&profiles[i / n_per_class], i as u64, seed, image_size))
        .collect())
}

/// Write clouds, images and `manifest.jsonl` below `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[SampleTriplet]) -> Result<Manifest> {
    let dir = dir.as_ref();
    for sub in ["lidar", "radar", "image"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let entries = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let rel = |sub: &str, ext: &str| PathBuf::from(sub).join(format!("{i:06}.{ext}"));
            let e = ManifestEntry {
                lidar: rel("lidar", "bin"),
                radar: rel("radar", "bin"),
                image: rel("image", "ppm"),
                t_lidar: s.t_lidar,
                t_radar: s.t_radar,
                t_camera: s.t_camera,
                label: s.label,
            };
            write_points(dir.join(&e.lidar), &s.lidar)?;
            write_points(dir.join(&e.radar), &s.radar)?;
            write_ppm(dir.join(&e.image), &s.image)?;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(entries, dir);
    manifest.write(dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraAugment {
    pub hflip_p: f64,
    pub vflip_p: f64,
    /// Rotation drawn from `U(-deg, deg)`.
    pub rotation_deg: f64,
    /// Jitter factors drawn from `U(1-a, 1+a)`.
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Shift drawn from `U(-t, t)` times the image extent.
    pub translate: f64,
    pub crop_scale: [f64; 2],
    pub crop_ratio: [f64; 2],
}

impl Default for CameraAugment {
    fn default() -> Self {
        Self {
            hflip_p: 0.5,
            vflip_p: 0.5,
            rotation_deg: 45.0,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            translate: 0.1,
            crop_scale: [0.8, 1.0],
            crop_ratio: [3.0 / 4.0, 4.0 / 3.0],
        }
    }
}

impl CameraAugment {
    pub fn disabled() -> Self {
        Self {
            hflip_p: 0.0,
            vflip_p: 0.0,
            rotation_deg: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            translate: 0.0,
            crop_scale: [1.0, 1.0],
            crop_ratio: [1.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarAugment {
    pub rotation_deg: f64,
    /// Noise std as a fraction of each field's range within the cloud.
    pub noise_frac: f64,
}

impl Default for RadarAugment {
    fn default() -> Self {
        Self {
            rotation_deg: 5.0,
            noise_frac: 0.02,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub camera: CameraAugment,
    pub radar: RadarAugment,
}

impl AugmentSpec {
    pub fn disabled() -> Self {
        Self {
            camera: CameraAugment::disabled(),
            radar: RadarAugment {
                rotation_deg: 0.0,
                noise_frac: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.camera;
        let probs = [c.hflip_p, c.vflip_p];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("flip probabilities must lie in [0,1]".into()));
        }
        let amps = [
            c.rotation_deg,
            c.brightness,
            c.contrast,
            c.saturation,
            c.translate,
            self.radar.rotation_deg,
            self.radar.noise_frac,
        ];
        if amps.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config("augmentation amplitudes must be >= 0".into()));
        }
        if c.brightness > 1.0 || c.contrast > 1.0 || c.saturation > 1.0 || c.translate >= 1.0 {
            return Err(Error::Config("jitter amplitudes must be <= 1 and translate < 1".into()));
        }
        let [s0, s1] = c.crop_scale;
        let [r0, r1] = c.crop_ratio;
        if !(0.0 < s0 && s0 <= s1 && s1 <= 1.0) || !(0.0 < r0 && r0 <= r1) {
            return Err(Error::Config("crop scale must satisfy 0 < lo <= hi <= 1 and ratio 0 < lo <= hi".into()));
        }
        Ok(())
    }
}

fn dims(image: &Tensor) -> (usize, usize, usize) {
    match image.shape() {
        [c, h, w] => (*c, *h, *w),
        s => panic!("image must be [C,H,W], got {s:?}"),
    }
}

pub fn hflip(image: &Tensor) -> Tensor {
    let (_, _, w) = dims(image);
    let mut out = image.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    out
}

pub fn vflip(image: &Tensor) -> Tensor {
    let (c, h, w) = dims(image);
    let src = image.data();
    let mut data = Vec::with_capacity(src.len());
    for ch in 0..c {
        for y in (0..h).rev() {
            let o = (ch * h + y) * w;
            data.extend_from_slice(&src[o..o + w]);
        }
    }
    Tensor::new(image.shape().to_vec(), data).expect("same shape")
}

fn bilinear_zero(plane: &[f32], h: usize, w: usize, sy: f64, sx: f64) -> f32 {
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = ((sy - y0) as f32, (sx - x0) as f32);
    let at = |y: f64, x: f64| -> f32 {
        if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
            0.0
        } else {
            plane[y as usize * w + x as usize]
        }
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
    let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Counter-clockwise rotation about the image centre; uncovered pixels are 0.
pub fn rotate_image(image: &Tensor, degrees: f64) -> Tensor {
    let (c, h, w) = dims(image);
    if degrees == 0.0 {
        return image.clone();
    }
    let (s, co) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let plane = h * w;
    let mut data = vec![0f32; c * plane];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // inverse map: rotate the output position back by -theta
            let sx = co * dx - s * dy + cx;
            let sy = s * dx + co * dy + cy;
            for ch in 0..c {
                data[ch * plane + y * w + x] =
                    bilinear_zero(&image.data()[ch * plane..(ch + 1) * plane], h, w, sy, sx);
            }
        }
    }
    Tensor::new(image.shape().to_vec(), data).expect("same shape")
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Multiplicative brightness, contrast and saturation adjustment with
/// clamping to `[0,1]` after each step. Factors of 1 leave the image as is.
pub fn color_jitter(image: &Tensor, brightness: f32, contrast: f32, saturation: f32) -> Tensor {
    let (c, h, w) = dims(image);
    let mut out = image.clone();
    let plane = h * w;
    if brightness != 1.0 {
        out.data_mut().iter_mut().for_each(|v| *v = (*v * brightness).clamp(0.0, 1.0));
    }
    if c != 3 {
        return out;
    }
    let d = out.data_mut();
    if contrast != 1.0 {
        let mean = (0..plane).map(|i| luma(d[i], d[plane + i], d[2 * plane + i]) as f64).sum::<f64>()
            / plane as f64;
        let mean = mean as f32;
        d.iter_mut()
            .for_each(|v| *v = ((*v - mean) * contrast + mean).clamp(0.0, 1.0));
    }
    if saturation != 1.0 {
        for i in 0..plane {
            let g = luma(d[i], d[plane + i], d[2 * plane + i]);
            for ch in 0..3 {
                let v = &mut d[ch * plane + i];
                *v = ((*v - g) * saturation + g).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Integer shift by `(dy, dx)` pixels with zero fill.
pub fn translate(image: &Tensor, dy: isize, dx: isize) -> Tensor {
    let (c, h, w) = dims(image);
    if (dy, dx) == (0, 0) {
        return image.clone();
    }
    let mut data = vec![0f32; image.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = y as isize - dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = x as isize - dx;
                if sx >= 0 && sx < w as isize {
                    data[(ch * h + y) * w + x] = image.data()[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    Tensor::new(image.shape().to_vec(), data).expect("same shape")
}

/// Crop `[top..top+ch, left..left+cw]` and resize it back to the full size.
pub fn resized_crop(image: &Tensor, top: usize, left: usize, ch: usize, cw: usize) -> Result<Tensor> {
    let (c, h, w) = dims(image);
    if ch == 0 || cw == 0 || top + ch > h || left + cw > w {
        return Err(Error::InvalidArgument(format!(
            "crop {ch}x{cw} at ({top},{left}) outside {h}x{w} image"
        )));
    }
    if (top, left, ch, cw) == (0, 0, h, w) {
        return Ok(image.clone());
    }
    let mut data = Vec::with_capacity(c * ch * cw);
    for plane in image.data().chunks_exact(h * w) {
        for y in top..top + ch {
            data.extend_from_slice(&plane[y * w + left..y * w + left + cw]);
        }
    }
    resize_bilinear(&Tensor::new(vec![c, ch, cw], data)?, h, w)
}

fn sample_crop<R: Rng + ?Sized>(h: usize, w: usize, spec: &CameraAugment, rng: &mut R) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let [s0, s1] = spec.crop_scale;
    let (l0, l1) = (spec.crop_ratio[0].ln(), spec.crop_ratio[1].ln());
    for _ in 0..10 {
        let target = area * if s0 < s1 { rng.gen_range(s0..=s1) } else { s0 };
        let ratio = (if l0 < l1 { rng.gen_range(l0..=l1) } else { l0 }).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if (1..=w).contains(&cw) && (1..=h).contains(&ch) {
            let top = rng.gen_range(0..=h - ch);
            let left = rng.gen_range(0..=w - cw);
            return (top, left, ch, cw);
        }
    }
    (0, 0, h, w)
}

fn factor<R: Rng + ?Sized>(amp: f64, rng: &mut R) -> f32 {
    if amp > 0.0 {
        rng.gen_range(1.0 - amp..=1.0 + amp) as f32
    } else {
        1.0
    }
}

/// Flips, rotation, colour jitter, translation and a random resized crop, in
/// that order. Input and output are `[3,H,W]` in `[0,1]`.
pub fn augment_camera<R: Rng + ?Sized>(image: &Tensor, spec: &CameraAugment, rng: &mut R) -> Tensor {
    let (_, h, w) = dims(image);
    let mut out = image.clone();
    if spec.hflip_p > 0.0 && rng.gen_bool(spec.hflip_p) {
        out = hflip(&out);
    }
    if spec.vflip_p > 0.0 && rng.gen_bool(spec.vflip_p) {
        out = vflip(&out);
    }
    if spec.rotation_deg > 0.0 {
        let deg = rng.gen_range(-spec.rotation_deg..=spec.rotation_deg);
        out = rotate_image(&out, deg);
    }
    let (b, c, s) = (
        factor(spec.brightness, rng),
        factor(spec.contrast, rng),
        factor(spec.saturation, rng),
    );
    out = color_jitter(&out, b, c, s);
    if spec.translate > 0.0 {
        let dy = (rng.gen_range(-spec.translate..=spec.translate) * h as f64).round() as isize;
        let dx = (rng.gen_range(-spec.translate..=spec.translate) * w as f64).round() as isize;
        out = translate(&out, dy, dx);
    }
    let (top, left, ch, cw) = sample_crop(h, w, spec, rng);
    out = resized_crop(&out, top, left, ch, cw).expect("crop inside image");
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

/// Rotate every point counter-clockwise about the origin in the x-y plane.
pub fn rotate_radar(cloud: &[RadarPoint], degrees: f64) -> Vec<RadarPoint> {
    let (s, c) = degrees.to_radians().sin_cos();
    cloud
        .iter()
        .map(|p| {
            let (x, y) = (p.x as f64, p.y as f64);
            RadarPoint {
                x: (c * x - s * y) as f32,
                y: (s * x + c * y) as f32,
                ..*p
            }
        })
        .collect()
}

fn field_range(values: impl Iterator<Item = f32>) -> f64 {
    let (lo, hi) = values.fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (hi - lo) as f64
    } else {
        0.0
    }
}

/// Gaussian noise on `snr` and `rcs` with std `frac` times each field's range.
pub fn radar_noise<R: Rng + ?Sized>(cloud: &[RadarPoint], frac: f64, rng: &mut R) -> Vec<RadarPoint> {
    let s_snr = frac * field_range(cloud.iter().map(|p| p.snr));
    let s_rcs = frac * field_range(cloud.iter().map(|p| p.rcs));
    let draw = |std: f64, rng: &mut R| if std > 0.0 { normal(0.0, std).sample(rng) } else { 0.0 };
    cloud
        .iter()
        .map(|p| RadarPoint {
            snr: (p.snr as f64 + draw(s_snr, rng)) as f32,
            rcs: (p.rcs as f64 + draw(s_rcs, rng)) as f32,
            ..*p
        })
        .collect()
}

/// Random ground-plane rotation followed by SNR/RCS noise.
pub fn augment_radar<R: Rng + ?Sized>(cloud: &[RadarPoint], spec: &RadarAugment, rng: &mut R) -> Vec<RadarPoint> {
    let rotated = if spec.rotation_deg > 0.0 {
        rotate_radar(cloud, rng.gen_range(-spec.rotation_deg..=spec.rotation_deg))
    } else {
        cloud.to_vec()
    };
    if spec.noise_frac > 0.0 {
        radar_noise(&rotated, spec.noise_frac, rng)
    } else {
        rotated
    }
}
