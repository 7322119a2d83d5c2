//! Single-sample latency measurement and model cost reporting.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion_head::{NetInput, Network};
use crate::nn::{count_params, MacCount};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub iterations: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Raw per-iteration times in milliseconds.
    pub samples_ms: Vec<f64>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyStats {
    pub fn from_samples(samples_ms: Vec<f64>) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::InvalidArgument("latency needs at least one iteration".into()));
        }
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            iterations: samples_ms.len(),
            mean_ms: samples_ms.iter().sum::<f64>() / samples_ms.len() as f64,
            p50_ms: percentile(&sorted, 50.0),
            p95_ms: percentile(&sorted, 95.0),
            min_ms: sorted[0],
            max_ms: sorted[sorted.len() - 1],
            samples_ms,
        })
    }
}

/// A random batch-1 input shaped for `network`.
pub fn random_input(network: &Network, seed: u64) -> NetInput {
    let (h, w) = network.input_hw();
    let mut rng = rng::stream(seed, Purpose::Init, 0xbe7c);
    let mut draw = |c: usize| Tensor::from_fn(&[1, c, h, w], |_| rng.gen_range(-1.0f32..1.0));
    NetInput {
        bev: network.variant.bev_channels().map(&mut draw),
        image: network.variant.uses_camera().then(|| draw(3)),
    }
}

/// Time `n_iter` eval-mode forward passes of `input` after `n_warmup`
/// untimed ones.
pub fn bench_latency(network: &Network, input: &NetInput, n_warmup: usize, n_iter: usize) -> Result<LatencyStats> {
    if n_iter == 0 {
        return Err(Error::InvalidArgument("n_iter must be >= 1".into()));
    }
    for _ in 0..n_warmup {
        network.infer(input)?;
    }
    let mut samples = Vec::with_capacity(n_iter);
    for _ in 0..n_iter {
        let t = Instant::now();
        std::hint::black_box(network.infer(input)?);
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    LatencyStats::from_samples(samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub params: u64,
    pub macs: u64,
    /// `macs / 1e9`.
    pub gmac: f64,
}

/// Trainable parameters and per-sample MACs of the whole network at its
/// configured input size.
pub fn report_model_cost(network: &Network) -> Result<ModelCost> {
    let (h, w) = network.input_hw();
    let macs = network.macs(h, w)?;
    Ok(ModelCost {
        params: count_params(network) as u64,
        macs,
        gmac: macs as f64 / 1e9,
    })
}
