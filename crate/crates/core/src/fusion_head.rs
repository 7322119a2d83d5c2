//! Mid-level gated fusion of BEV and camera features, the shared
//! classification head, and the full network variants.
//!
//! With backbone features `f_f` (fused LiDAR+RADAR BEV) and `f_c` (camera):
//!
//! ```text
//! f'_f = ReLU(W_f f_f + b_f)          f'_c = ReLU(W_c f_c + b_c)
//! g    = sigmoid(W_g [f'_f, f'_c] + b_g) = [g_f, g_c]
//! f_fused = [f_f * g_f, f_c * g_c]
//! logits  = W_2 dropout(ReLU(BN(W_1 f_fused + b_1))) + b_2
//! ```
//!
//! The gates scale the original backbone features, not the projections.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{FeatureExtractorSpec, TinyCnn, TinyCnnCache};
use crate::error::{Error, Result};
use crate::nn::{
    dropout, dropout_backward, relu_backward, relu_in_place, sigmoid, sigmoid_backward,
    BatchNorm1d, BnCache, Linear, MacCount, Mode, Module, Param,
};
use crate::rng::{self, Purpose};
use crate::sensor_io::NUM_CLASSES;
use crate::tensor::{Scalar, Tensor};

pub const HEAD_HIDDEN: usize = 512;
pub const HEAD_DROPOUT: f64 = 0.3;

/// Gate vectors of one sample and their means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub g_f: Vec<f32>,
    pub g_c: Vec<f32>,
    pub summary_f: f64,
    pub summary_c: f64,
}

impl GateRecord {
    pub fn new(g_f: Vec<f32>, g_c: Vec<f32>) -> Self {
        let mean = |v: &[f32]| v.iter().map(|x| *x as f64).sum::<f64>() / v.len().max(1) as f64;
        Self {
            summary_f: mean(&g_f),
            summary_c: mean(&g_c),
            g_f,
            g_c,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateSummary {
    /// `(mean g_f, mean g_c)` per sample.
    pub per_sample: Vec<(f64, f64)>,
    /// Average of the per-sample means.
    pub batch: (f64, f64),
}

pub fn gate_summary(records: &[GateRecord]) -> Result<GateSummary> {
    if records.is_empty() {
        return Err(Error::Empty("gate records"));
    }
    let per_sample: Vec<(f64, f64)> = records.iter().map(|r| (r.summary_f, r.summary_c)).collect();
    let n = per_sample.len() as f64;
    let batch = per_sample
        .iter()
        .fold((0.0, 0.0), |acc, s| (acc.0 + s.0 / n, acc.1 + s.1 / n));
    Ok(GateSummary { per_sample, batch })
}

/// One row of the `gates.csv` export.
#[derive(Clone, Debug, PartialEq)]
pub struct GateRow {
    pub sample_id: usize,
    pub label: usize,
    pub prediction: usize,
    pub record: GateRecord,
}

pub const GATES_CSV_HEADER: &str = "sample_id,label,prediction,summary_f,summary_c";

/// Render gate summaries as CSV: one line per sample, means with 6 decimals.
pub fn gates_csv(rows: &[GateRow]) -> String {
    let mut out = String::from(GATES_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.sample_id, r.label, r.prediction, r.record.summary_f, r.record.summary_c
        ));
    }
    out
}

/// Write `gates.csv` and, when `vectors` is given, the full gate vectors as a
/// `[N, 2d]` BEVT tensor.
pub fn write_gates(csv_path: impl AsRef<Path>, vectors: Option<&Path>, rows: &[GateRow]) -> Result<()> {
    let csv_path = csv_path.as_ref();
    let mut f = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    f.write_all(gates_csv(rows).as_bytes())
        .map_err(|e| Error::io(csv_path, e))?;
    if let (Some(path), Some(first)) = (vectors, rows.first()) {
        let width = first.record.g_f.len() + first.record.g_c.len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            data.extend_from_slice(&r.record.g_f);
            data.extend_from_slice(&r.record.g_c);
        }
        crate::sensor_io::write_tensor(path, &Tensor::new(vec![rows.len(), width], data)?)?;
    }
    Ok(())
}

/// Channel-weighted activation map `mean_c(g[c] * A[c])` for visualizing where
/// a gated branch responds. `feature_map` is `[d,h,w]`, `gate` has length `d`.
pub fn gate_weighted_map(feature_map: &Tensor, gate: &[f32]) -> Result<Tensor> {
    let (d, h, w) = match feature_map.shape() {
        [d, h, w] if *d == gate.len() => (*d, *h, *w),
        s => {
            return Err(Error::Shape(format!(
                "feature map {s:?} does not match gate length {}",
                gate.len()
            )))
        }
    };
    let mut out = vec![0f32; h * w];
    for (plane, g) in feature_map.data().chunks_exact(h * w).zip(gate) {
        for (o, a) in out.iter_mut().zip(plane) {
            *o += g * a / d as f32;
        }
    }
    Tensor::new(vec![h, w], out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatedFusion<T: Scalar = f32> {
    pub proj_f: Linear<T>,
    pub proj_c: Linear<T>,
    pub gate: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct GateCache<T: Scalar> {
    pf: Tensor<T>,
    pc: Tensor<T>,
    concat: Tensor<T>,
    g: Tensor<T>,
}

impl<T: Scalar> GateCache<T> {
    /// Per-sample gate records.
    pub fn records(&self) -> Vec<GateRecord> {
        gate_records(&self.g)
    }
}

fn gate_records<T: Scalar>(g: &Tensor<T>) -> Vec<GateRecord> {
    let two_d = g.shape()[1];
    let d = two_d / 2;
    g.data()
        .chunks_exact(two_d)
        .map(|row| {
            let v: Vec<f32> = row.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect();
            GateRecord::new(v[..d].to_vec(), v[d..].to_vec())
        })
        .collect()
}

fn concat_cols<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, wa, wb) = match (a.shape(), b.shape()) {
        ([n, wa], [m, wb]) if n == m => (*n, *wa, *wb),
        (sa, sb) => return Err(Error::Shape(format!("cannot concatenate {sa:?} and {sb:?}"))),
    };
    let mut data = Vec::with_capacity(n * (wa + wb));
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * wa..(i + 1) * wa]);
        data.extend_from_slice(&b.data()[i * wb..(i + 1) * wb]);
    }
    Tensor::new(vec![n, wa + wb], data)
}

fn split_cols<T: Scalar>(x: &Tensor<T>, left: usize) -> (Tensor<T>, Tensor<T>) {
    let (n, w) = (x.shape()[0], x.shape()[1]);
    let mut a = Vec::with_capacity(n * left);
    let mut b = Vec::with_capacity(n * (w - left));
    for row in x.data().chunks_exact(w) {
        a.extend_from_slice(&row[..left]);
        b.extend_from_slice(&row[left..]);
    }
    (
        Tensor::new(vec![n, left], a).expect("split"),
        Tensor::new(vec![n, w - left], b).expect("split"),
    )
}

fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

impl<T: Scalar> GatedFusion<T> {
    pub fn new<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        Self {
            proj_f: Linear::new("fusion.proj_f", d, d, rng),
            proj_c: Linear::new("fusion.proj_c", d, d, rng),
            gate: Linear::new("fusion.gate", 2 * d, 2 * d, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.proj_f.inputs()
    }

    pub fn forward(&self, f_f: &Tensor<T>, f_c: &Tensor<T>) -> Result<(Tensor<T>, GateCache<T>)> {
        let d = self.feature_dim();
        if f_f.shape() != f_c.shape() || f_f.shape().get(1) != Some(&d) {
            return Err(Error::Shape(format!(
                "gated fusion expects two [B,{d}] inputs, got {:?} and {:?}",
                f_f.shape(),
                f_c.shape()
            )));
        }
        let mut pf = self.proj_f.forward(f_f)?;
        relu_in_place(&mut pf);
        let mut pc = self.proj_c.forward(f_c)?;
        relu_in_place(&mut pc);
        let concat = concat_cols(&pf, &pc)?;
        let g = sigmoid(&self.gate.forward(&concat)?);
        let (g_f, g_c) = split_cols(&g, d);
        let fused = concat_cols(&hadamard(f_f, &g_f), &hadamard(f_c, &g_c))?;
        Ok((fused, GateCache { pf, pc, concat, g }))
    }

    /// Returns `(dL/df_f, dL/df_c)` and accumulates parameter gradients.
    pub fn backward(
        &mut self,
        cache: &GateCache<T>,
        f_f: &Tensor<T>,
        f_c: &Tensor<T>,
        dfused: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let d = self.feature_dim();
        let (dy_f, dy_c) = split_cols(dfused, d);
        let (g_f, g_c) = split_cols(&cache.g, d);
        let dg = concat_cols(&hadamard(&dy_f, f_f), &hadamard(&dy_c, f_c))?;
        let dz = sigmoid_backward(&cache.g, &dg);
        let dconcat = self.gate.backward(&cache.concat, &dz)?;
        let (dpf, dpc) = split_cols(&dconcat, d);
        let df_proj = self.proj_f.backward(f_f, &relu_backward(&cache.pf, &dpf))?;
        let dc_proj = self.proj_c.backward(f_c, &relu_backward(&cache.pc, &dpc))?;
        let mut df = hadamard(&dy_f, &g_f);
        let mut dc = hadamard(&dy_c, &g_c);
        for (a, b) in df.data_mut().iter_mut().zip(df_proj.data()) {
            *a += *b;
        }
        for (a, b) in dc.data_mut().iter_mut().zip(dc_proj.data()) {
            *a += *b;
        }
        Ok((df, dc))
    }

    pub fn macs(&self) -> u64 {
        self.proj_f.macs() + self.proj_c.macs() + self.gate.macs()
    }

    pub fn cast<U: Scalar>(&self) -> GatedFusion<U> {
        GatedFusion {
            proj_f: self.proj_f.cast(),
            proj_c: self.proj_c.cast(),
            gate: self.gate.cast(),
        }
    }
}

impl<T: Scalar> Module<T> for GatedFusion<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.proj_f.params();
        p.extend(self.proj_c.params());
        p.extend(self.gate.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.proj_f.params_mut();
        p.extend(self.proj_c.params_mut());
        p.extend(self.gate.params_mut());
        p
    }
}

/// `Linear(in -> 512) -> BN -> ReLU -> Dropout(0.3) -> Linear(512 -> 9)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead<T: Scalar = f32> {
    pub fc1: Linear<T>,
    pub bn: BatchNorm1d<T>,
    pub fc2: Linear<T>,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct HeadCache<T: Scalar> {
    x: Tensor<T>,
    bn: Option<BnCache<T>>,
    r: Tensor<T>,
    dropped: Tensor<T>,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new("head.fc1", inputs, HEAD_HIDDEN, rng),
            bn: BatchNorm1d::new("head.bn", HEAD_HIDDEN),
            fc2: Linear::new("head.fc2", HEAD_HIDDEN, NUM_CLASSES, rng),
            dropout: HEAD_DROPOUT,
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, HeadCache<T>)> {
        let z = self.fc1.forward(x)?;
        let (mut r, bn) = match mode {
            Mode::Train => {
                let (y, c) = self.bn.forward_train(&z)?;
                (y, Some(c))
            }
            Mode::Eval => (self.bn.forward_eval(&z)?, None),
        };
        relu_in_place(&mut r);
        let (dropped, mask) = dropout(&r, self.dropout, mode, rng)?;
        let logits = self.fc2.forward(&dropped)?;
        Ok((
            logits,
            HeadCache {
                x: x.clone(),
                bn,
                r,
                dropped,
                mask,
            },
        ))
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut r = self.bn.forward_eval(&self.fc1.forward(x)?)?;
        relu_in_place(&mut r);
        self.fc2.forward(&r)
    }

    /// Backward through a train-mode forward pass; returns `dL/dx`.
    pub fn backward(&mut self, cache: &HeadCache<T>, dlogits: &Tensor<T>) -> Result<Tensor<T>> {
        let bn_cache = cache.bn.as_ref().ok_or_else(|| {
            Error::InvalidArgument("head backward needs a train-mode forward pass".into())
        })?;
        let ddrop = self.fc2.backward(&cache.dropped, dlogits)?;
        let dr = dropout_backward(&ddrop, cache.mask.as_deref());
        let dbn = relu_backward(&cache.r, &dr);
        let dz = self.bn.backward(bn_cache, &dbn)?;
        self.fc1.backward(&cache.x, &dz)
    }

    pub fn macs(&self) -> u64 {
        self.fc1.macs() + self.fc2.macs()
    }

    pub fn cast<U: Scalar>(&self) -> ClassifierHead<U> {
        ClassifierHead {
            fc1: self.fc1.cast(),
            bn: self.bn.cast(),
            fc2: self.fc2.cast(),
            dropout: self.dropout,
        }
    }
}

impl<T: Scalar> Module<T> for ClassifierHead<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.fc1.params();
        p.extend(self.bn.params());
        p.extend(self.fc2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.fc1.params_mut();
        p.extend(self.bn.params_mut());
        p.extend(self.fc2.params_mut());
        p
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.bn.buffers()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.bn.buffers_mut()
    }
}

/// Which inputs a network consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    CameraOnly,
    LidarOnly,
    RadarOnly,
    EarlyFusion,
    LrcWeathernet,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::CameraOnly,
        Variant::LidarOnly,
        Variant::RadarOnly,
        Variant::EarlyFusion,
        Variant::LrcWeathernet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CameraOnly => "camera_only",
            Variant::LidarOnly => "lidar_only",
            Variant::RadarOnly => "radar_only",
            Variant::EarlyFusion => "early_fusion",
            Variant::LrcWeathernet => "lrc_weathernet",
        }
    }

    /// Channels of the BEV input, if the variant reads one.
    pub fn bev_channels(self) -> Option<usize> {
        match self {
            Variant::CameraOnly => None,
            Variant::LidarOnly => Some(1),
            Variant::RadarOnly => Some(2),
            Variant::EarlyFusion | Variant::LrcWeathernet => Some(3),
        }
    }

    pub fn uses_camera(self) -> bool {
        matches!(self, Variant::CameraOnly | Variant::LrcWeathernet)
    }

    pub fn uses_radar(self) -> bool {
        matches!(
            self,
            Variant::RadarOnly | Variant::EarlyFusion | Variant::LrcWeathernet
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model variant {s:?}")))
    }
}

/// Network inputs for one batch. `bev` is `[B,C,H,W]` with the variant's BEV
/// channel count; `image` is `[B,3,H,W]`.
#[derive(Clone, Debug, Default)]
pub struct NetInput<T: Scalar = f32> {
    pub bev: Option<Tensor<T>>,
    pub image: Option<Tensor<T>>,
}

impl<T: Scalar> NetInput<T> {
    pub fn batch_size(&self) -> usize {
        self.bev
            .as_ref()
            .or(self.image.as_ref())
            .map(|t| t.shape()[0])
            .unwrap_or(0)
    }

    pub fn cast<U: Scalar>(&self) -> NetInput<U> {
        NetInput {
            bev: self.bev.as_ref().map(Tensor::cast),
            image: self.image.as_ref().map(Tensor::cast),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NetCache<T: Scalar> {
    bev: Option<(TinyCnnCache<T>, Tensor<T>)>,
    cam: Option<(TinyCnnCache<T>, Tensor<T>)>,
    gate: Option<GateCache<T>>,
    head: HeadCache<T>,
}

impl<T: Scalar> NetCache<T> {
    pub fn gate_records(&self) -> Vec<GateRecord> {
        self.gate.as_ref().map(GateCache::records).unwrap_or_default()
    }

    /// Last pre-pool activation map of the BEV and camera backbones.
    pub fn feature_maps(&self) -> (Option<&Tensor<T>>, Option<&Tensor<T>>) {
        (
            self.bev.as_ref().map(|(c, _)| c.feature_map()),
            self.cam.as_ref().map(|(c, _)| c.feature_map()),
        )
    }
}

/// Backbone(s), optional gated fusion, and the classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    pub variant: Variant,
    pub bev_backbone: Option<TinyCnn<T>>,
    pub cam_backbone: Option<TinyCnn<T>>,
    pub fusion: Option<GatedFusion<T>>,
    pub head: ClassifierHead<T>,
}

fn sub_seed(seed: u64, part: u64) -> u64 {
    seed ^ part.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl<T: Scalar> Network<T> {
    pub fn new(variant: Variant, feature_dim: usize, input_hw: (usize, usize), seed: u64) -> Result<Self> {
        let spec = |c: usize| FeatureExtractorSpec::tiny(c, feature_dim).with_input_hw(input_hw.0, input_hw.1);
        let bev_backbone = variant
            .bev_channels()
            .map(|c| TinyCnn::new("bev_backbone", spec(c), sub_seed(seed, 1)))
            .transpose()?;
        let cam_backbone = variant
            .uses_camera()
            .then(|| TinyCnn::new("cam_backbone", spec(3), sub_seed(seed, 2)))
            .transpose()?;
        let mut rng = rng::stream(seed, Purpose::Init, 3);
        let fusion = (variant == Variant::LrcWeathernet).then(|| GatedFusion::new(feature_dim, &mut rng));
        let head_in = if fusion.is_some() { 2 * feature_dim } else { feature_dim };
        let head = ClassifierHead::new(head_in, &mut rng);
        Ok(Self {
            variant,
            bev_backbone,
            cam_backbone,
            fusion,
            head,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.bev_backbone
            .as_ref()
            .or(self.cam_backbone.as_ref())
            .map(TinyCnn::feature_dim)
            .unwrap_or(0)
    }

    pub fn input_hw(&self) -> (usize, usize) {
        self.bev_backbone
            .as_ref()
            .or(self.cam_backbone.as_ref())
            .map(|b| b.spec.input_hw)
            .unwrap_or((0, 0))
    }

    fn required<'a>(t: &'a Option<Tensor<T>>, what: &str, variant: Variant) -> Result<&'a Tensor<T>> {
        t.as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{variant} needs a {what} input")))
    }

    /// Forward pass keeping everything needed for [`Network::backward`].
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        input: &NetInput<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, NetCache<T>)> {
        let bev = match &self.bev_backbone {
            Some(b) => {
                let x = Self::required(&input.bev, "BEV", self.variant)?;
                let (f, c) = b.forward(x)?;
                Some((c, f))
            }
            None => None,
        };
        let cam = match &self.cam_backbone {
            Some(b) => {
                let x = Self::required(&input.image, "camera", self.variant)?;
                let (f, c) = b.forward(x)?;
                Some((c, f))
            }
            None => None,
        };
        let (head_in, gate) = match (&self.fusion, &bev, &cam) {
            (Some(fusion), Some((_, ff)), Some((_, fc))) => {
                let (fused, gc) = fusion.forward(ff, fc)?;
                (fused, Some(gc))
            }
            (None, Some((_, f)), None) | (None, None, Some((_, f))) => (f.clone(), None),
            _ => return Err(Error::InvalidArgument("inconsistent network layout".into())),
        };
        let (logits, head) = self.head.forward(&head_in, mode, rng)?;
        Ok((logits, NetCache { bev, cam, gate, head }))
    }

    /// Gradients of all parameters given `dL/dlogits` from a train-mode pass.
    pub fn backward(&mut self, cache: &NetCache<T>, dlogits: &Tensor<T>) -> Result<()> {
        let dhead = self.head.backward(&cache.head, dlogits)?;
        let (dbev, dcam) = match (&mut self.fusion, &cache.gate, &cache.bev, &cache.cam) {
            (Some(fusion), Some(gc), Some((_, ff)), Some((_, fc))) => {
                let (a, b) = fusion.backward(gc, ff, fc, &dhead)?;
                (Some(a), Some(b))
            }
            _ if cache.bev.is_some() => (Some(dhead), None),
            _ => (None, Some(dhead)),
        };
        if let (Some(b), Some((c, _)), Some(d)) = (&mut self.bev_backbone, &cache.bev, dbev) {
            b.backward(c, &d, false)?;
        }
        if let (Some(b), Some((c, _)), Some(d)) = (&mut self.cam_backbone, &cache.cam, dcam) {
            b.backward(c, &d, false)?;
        }
        Ok(())
    }

    /// Eval-mode logits and gate records without mutating anything.
    pub fn infer(&self, input: &NetInput<T>) -> Result<(Tensor<T>, Vec<GateRecord>)> {
        let bev = match &self.bev_backbone {
            Some(b) => Some(b.extract_features(Self::required(&input.bev, "BEV", self.variant)?)?),
            None => None,
        };
        let cam = match &self.cam_backbone {
            Some(b) => Some(b.extract_features(Self::required(&input.image, "camera", self.variant)?)?),
            None => None,
        };
        let (head_in, gates) = match (&self.fusion, bev, cam) {
            (Some(fusion), Some(ff), Some(fc)) => {
                let (fused, gc) = fusion.forward(&ff, &fc)?;
                (fused, gc.records())
            }
            (None, Some(f), None) | (None, None, Some(f)) => (f, Vec::new()),
            _ => return Err(Error::InvalidArgument("inconsistent network layout".into())),
        };
        Ok((self.head.forward_eval(&head_in)?, gates))
    }

    /// Fused-BEV + camera forward pass; only valid for the gated variant.
    pub fn forward_lrc<R: Rng + ?Sized>(
        &mut self,
        bev: &Tensor<T>,
        image: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Vec<GateRecord>)> {
        if self.variant != Variant::LrcWeathernet {
            return Err(Error::InvalidArgument(format!("{} has no gated fusion", self.variant)));
        }
        let input = NetInput {
            bev: Some(bev.clone()),
            image: Some(image.clone()),
        };
        let (logits, cache) = self.forward(&input, mode, rng)?;
        Ok((logits, cache.gate_records()))
    }

    /// Single-branch forward pass for the unimodal and early-fusion variants.
    pub fn forward_unimodal<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        let input = match self.variant {
            Variant::LrcWeathernet => {
                return Err(Error::InvalidArgument("lrc_weathernet takes two inputs".into()))
            }
            Variant::CameraOnly => NetInput {
                bev: None,
                image: Some(x.clone()),
            },
            _ => NetInput {
                bev: Some(x.clone()),
                image: None,
            },
        };
        Ok(self.forward(&input, mode, rng)?.0)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            variant: self.variant,
            bev_backbone: self.bev_backbone.as_ref().map(TinyCnn::cast),
            cam_backbone: self.cam_backbone.as_ref().map(TinyCnn::cast),
            fusion: self.fusion.as_ref().map(GatedFusion::cast),
            head: self.head.cast(),
        }
    }
}

impl<T: Scalar> Module<T> for Network<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = Vec::new();
        if let Some(b) = &self.bev_backbone {
            p.extend(b.params());
        }
        if let Some(b) = &self.cam_backbone {
            p.extend(b.params());
        }
        if let Some(f) = &self.fusion {
            p.extend(f.params());
        }
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = Vec::new();
        if let Some(b) = &mut self.bev_backbone {
            p.extend(b.params_mut());
        }
        if let Some(b) = &mut self.cam_backbone {
            p.extend(b.params_mut());
        }
        if let Some(f) = &mut self.fusion {
            p.extend(f.params_mut());
        }
        p.extend(self.head.params_mut());
        p
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.head.buffers()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.head.buffers_mut()
    }
}

impl<T: Scalar> MacCount for Network<T> {
    fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let mut total = self.head.macs();
        for b in [&self.bev_backbone, &self.cam_backbone].into_iter().flatten() {
            total += b.macs(h, w)?;
        }
        if let Some(f) = &self.fusion {
            total += f.macs();
        }
        Ok(total)
    }
}

/// Index of the largest logit in each row.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, v)| if *v > best.1 { (i, *v) } else { best })
                .0
        })
        .collect()
}
