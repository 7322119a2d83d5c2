//! Central finite-difference gradient checks in 64-bit precision.
//!
//! The checker only ever calls forward passes; analytic gradients produced by
//! the backward passes are compared against
//! `(L(theta + h) - L(theta - h)) / 2h` with `h = step * |theta|`
//! (never below `min_step`).
//!
//! A coordinate whose one-sided slopes disagree badly sits on a ReLU kink for
//! that step size; it is retried with a ten times smaller step and counted as
//! a kink only if the disagreement persists.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Module;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub min_step: f64,
    /// Relative errors are `|a - n| / max(|a|, |n|, denom_floor)`.
    pub denom_floor: f64,
    /// Coordinates sampled per parameter tensor; `None` checks all.
    pub per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            min_step: 1e-6,
            denom_floor: 1e-4,
            per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub kinks: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }

    fn record(&mut self, rel: f64, label: impl FnOnce() -> String) {
        self.checked += 1;
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = label();
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

enum Probe {
    Smooth(f64),
    Kink,
}

/// Numerical derivative at one coordinate. `eval(v)` must return the loss
/// with the coordinate set to `v`.
fn probe(theta: f64, cfg: &GradCheckConfig, mut eval: impl FnMut(f64) -> f64) -> Probe {
    let center = eval(theta);
    let mut h = (cfg.step * theta.abs()).max(cfg.min_step);
    for _ in 0..3 {
        let up = eval(theta + h);
        let down = eval(theta - h);
        let fwd = (up - center) / h;
        let bwd = (center - down) / h;
        let central = (up - down) / (2.0 * h);
        // smooth: one-sided slopes differ by O(h * f''); kinks give O(1) jumps
        if relative_error(fwd, bwd, cfg.denom_floor) < 1e-2 {
            return Probe::Smooth(central);
        }
        h /= 10.0;
    }
    Probe::Kink
}

fn coordinates(len: usize, cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match cfg.per_tensor {
        Some(k) if k < len => {
            let mut idx = sample(rng, len, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

/// Compare the gradients currently stored in `model`'s parameters against
/// finite differences of `loss`.
pub fn check_params<M: Module<f64>>(
    model: &mut M,
    cfg: &GradCheckConfig,
    mut loss: impl FnMut(&mut M) -> f64,
) -> GradCheckReport {
    let analytic: Vec<(String, Tensor<f64>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for j in coordinates(grad.len(), cfg, &mut rng) {
            let theta = model.params()[pi].value.data()[j];
            let result = probe(theta, cfg, |v| {
                model.params_mut()[pi].value.data_mut()[j] = v;
                loss(model)
            });
            model.params_mut()[pi].value.data_mut()[j] = theta;
            match result {
                Probe::Smooth(numeric) => {
                    let rel = relative_error(grad.data()[j], numeric, cfg.denom_floor);
                    report.record(rel, || {
                        format!("{name}[{j}]: analytic {} numeric {numeric}", grad.data()[j])
                    });
                }
                Probe::Kink => report.kinks += 1,
            }
        }
    }
    report
}

/// Compare an analytic input gradient against finite differences of `loss`.
pub fn check_input(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    cfg: &GradCheckConfig,
    label: &str,
    mut loss: impl FnMut(&Tensor<f64>) -> f64,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut work = x.clone();
    let mut report = GradCheckReport::default();
    for j in coordinates(x.len(), cfg, &mut rng) {
        let theta = x.data()[j];
        let result = probe(theta, cfg, |v| {
            work.data_mut()[j] = v;
            loss(&work)
        });
        work.data_mut()[j] = theta;
        match result {
            Probe::Smooth(numeric) => {
                let rel = relative_error(analytic.data()[j], numeric, cfg.denom_floor);
                report.record(rel, || {
                    format!("{label}[{j}]: analytic {} numeric {numeric}", analytic.data()[j])
                });
            }
            Probe::Kink => report.kinks += 1,
        }
    }
    report
}
