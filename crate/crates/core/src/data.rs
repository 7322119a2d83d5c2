//! Rasterized, cached samples and network batch assembly.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bev_raster::{
    bev_inputs, channel_stats, early_fuse, normalize_in_place, rasterize_radar, resize_bilinear,
    FrustumSpec, GridSpec, IMAGENET_MEAN, IMAGENET_STD, LIDAR_MEAN, LIDAR_STD, RADAR_MEAN,
    RADAR_STD,
};
use crate::error::{Error, Result};
use crate::fusion_head::{NetInput, Variant};
use crate::rng::{self, Purpose};
use crate::sensor_io::{Manifest, RadarPoint, SampleTriplet};
use crate::synth::{augment_camera, augment_radar, AugmentSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelNorm {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// Per-channel normalization constants of every input stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub lidar: ChannelNorm,
    pub radar: ChannelNorm,
    pub camera: ChannelNorm,
}

impl NormStats {
    /// Statistics measured on the reference real-world recordings.
    pub fn reference() -> Self {
        Self {
            lidar: ChannelNorm {
                mean: LIDAR_MEAN.to_vec(),
                std: LIDAR_STD.to_vec(),
            },
            radar: ChannelNorm {
                mean: RADAR_MEAN.to_vec(),
                std: RADAR_STD.to_vec(),
            },
            camera: ChannelNorm {
                mean: IMAGENET_MEAN.to_vec(),
                std: IMAGENET_STD.to_vec(),
            },
        }
    }

    /// BEV statistics measured on `indices` of `set` (un-augmented); camera
    /// statistics stay at the ImageNet values.
    pub fn from_set(set: &PreparedSet, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("normalization set"));
        }
        let lidar: Vec<&Tensor> = indices.iter().map(|&i| &set.samples[i].lidar).collect();
        let radar: Vec<&Tensor> = indices.iter().map(|&i| &set.samples[i].radar).collect();
        let (lm, ls) = channel_stats(&lidar)?;
        let (rm, rs) = channel_stats(&radar)?;
        Ok(Self {
            lidar: ChannelNorm { mean: lm, std: ls },
            radar: ChannelNorm { mean: rm, std: rs },
            camera: ChannelNorm {
                mean: IMAGENET_MEAN.to_vec(),
                std: IMAGENET_STD.to_vec(),
            },
        })
    }
}

/// Which normalization a training run uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSource {
    /// Measured on the training split.
    #[default]
    Dataset,
    Reference,
}

/// One sample with its BEV rasters computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    /// `[1,H,W]` resized, un-normalized.
    pub lidar: Tensor,
    /// `[2,H,W]` resized, un-normalized, from the un-augmented cloud.
    pub radar: Tensor,
    /// Kept to re-rasterize after RADAR augmentation.
    pub radar_cloud: Vec<RadarPoint>,
    /// `[3,H,W]` 8-bit levels.
    pub image: Vec<u8>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSet {
    pub samples: Vec<PreparedSample>,
    pub frustum: FrustumSpec,
    pub grid: GridSpec,
}

fn image_levels(image: &Tensor, h: usize, w: usize) -> Result<Vec<u8>> {
    let image = match image.shape() {
        [3, ih, iw] if (*ih, *iw) == (h, w) => image.clone(),
        [3, _, _] => resize_bilinear(image, h, w)?,
        s => return Err(Error::Shape(format!("camera frame must be [3,H,W], got {s:?}"))),
    };
    Ok(image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect())
}

fn prepare(s: &SampleTriplet, f: &FrustumSpec, g: &GridSpec) -> Result<PreparedSample> {
    let (lidar, radar) = bev_inputs(&s.lidar, &s.radar, f, g)?;
    Ok(PreparedSample {
        lidar,
        radar,
        radar_cloud: s.radar.clone(),
        image: image_levels(&s.image, g.out_h, g.out_w)?,
        label: s.label,
    })
}

impl PreparedSet {
    pub fn from_triplets(samples: &[SampleTriplet], frustum: &FrustumSpec, grid: &GridSpec) -> Result<Self> {
        frustum.validate()?;
        grid.validate()?;
        let samples = samples
            .par_iter()
            .map(|s| prepare(s, frustum, grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            frustum: *frustum,
            grid: *grid,
        })
    }

    pub fn from_manifest(manifest: &Manifest, frustum: &FrustumSpec, grid: &GridSpec) -> Result<Self> {
        frustum.validate()?;
        grid.validate()?;
        let samples = (0..manifest.len())
            .into_par_iter()
            .map(|i| prepare(&manifest.load_sample(i)?, frustum, grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            frustum: *frustum,
            grid: *grid,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.grid.out_h, self.grid.out_w)
    }

    /// A new set holding clones of the selected samples.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            frustum: self.frustum,
            grid: self.grid,
        }
    }
}

/// Sample indices of a train/validation/test partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class shuffled partition with `round(n * train)` and `round(n * val)`
/// samples of each class in the first two parts; the rest go to test.
pub fn stratified_split(labels: &[usize], train: f64, val: f64, seed: u64) -> Result<Split> {
    if !(train > 0.0 && val >= 0.0 && train + val <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fractions {train}/{val} must be positive and sum to at most 1"
        )));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng::stream(seed, Purpose::Split, c as u64));
        let n = idx.len() as f64;
        let n_train = (n * train).round() as usize;
        let n_val = ((n * val).round() as usize).min(idx.len() - n_train);
        split.train.extend_from_slice(&idx[..n_train]);
        split.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        split.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    for part in [&mut split.train, &mut split.val, &mut split.test] {
        part.sort_unstable();
    }
    Ok(split)
}

/// Augmentation applied while assembling a training batch. Each sample uses
/// its own stream keyed by `(seed, epoch, sample index)`.
#[derive(Clone, Copy, Debug)]
pub struct AugmentPlan<'a> {
    pub spec: &'a AugmentSpec,
    pub seed: u64,
    pub epoch: usize,
}

fn sample_inputs(
    set: &PreparedSet,
    index: usize,
    variant: Variant,
    norm: &NormStats,
    augment: Option<AugmentPlan>,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let s = &set.samples[index];
    let (h, w) = set.hw();
    let mut rng = augment.map(|a| rng::stream(a.seed, Purpose::Augment, ((a.epoch as u64) << 32) | index as u64));
    let radar = |rng: &mut Option<rand_chacha::ChaCha8Rng>| -> Result<Tensor> {
        let mut r = match (augment, rng.as_mut()) {
            (Some(a), Some(rng)) if a.spec.radar.rotation_deg > 0.0 || a.spec.radar.noise_frac > 0.0 => {
                let cloud = augment_radar(&s.radar_cloud, &a.spec.radar, rng);
                resize_bilinear(&rasterize_radar(&cloud, &set.frustum, &set.grid)?.tensor, h, w)?
            }
            _ => s.radar.clone(),
        };
        normalize_in_place(&mut r, &norm.radar.mean, &norm.radar.std);
        Ok(r)
    };
    let lidar = || {
        let mut l = s.lidar.clone();
        normalize_in_place(&mut l, &norm.lidar.mean, &norm.lidar.std);
        l
    };
    let bev = match variant {
        Variant::CameraOnly => None,
        Variant::LidarOnly => Some(lidar()),
        Variant::RadarOnly => Some(radar(&mut rng)?),
        Variant::EarlyFusion | Variant::LrcWeathernet => Some(early_fuse(&lidar(), &radar(&mut rng)?)?),
    };
    let image = if variant.uses_camera() {
        let data = s.image.iter().map(|v| *v as f32 / 255.0).collect();
        let mut img = Tensor::new(vec![3, h, w], data)?;
        if let (Some(a), Some(rng)) = (augment, rng.as_mut()) {
            img = augment_camera(&img, &a.spec.camera, rng);
        }
        normalize_in_place(&mut img, &norm.camera.mean, &norm.camera.std);
        Some(img)
    } else {
        None
    };
    Ok((bev, image))
}

/// Stack the selected samples into a network input and their labels.
pub fn make_batch(
    set: &PreparedSet,
    indices: &[usize],
    variant: Variant,
    norm: &NormStats,
    augment: Option<AugmentPlan>,
) -> Result<(NetInput, Vec<usize>)> {
    if indices.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let parts = indices
        .par_iter()
        .map(|&i| sample_inputs(set, i, variant, norm, augment))
        .collect::<Result<Vec<_>>>()?;
    let bev: Option<Vec<&Tensor>> = parts.iter().map(|p| p.0.as_ref()).collect();
    let image: Option<Vec<&Tensor>> = parts.iter().map(|p| p.1.as_ref()).collect();
    let input = NetInput {
        bev: bev.map(|v| Tensor::stack(&v)).transpose()?,
        image: image.map(|v| Tensor::stack(&v)).transpose()?,
    };
    Ok((input, indices.iter().map(|&i| set.samples[i].label).collect()))
}
