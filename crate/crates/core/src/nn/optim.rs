use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// One AdamW update at step `t` (1-based) with decoupled weight decay:
/// `theta -= lr * wd * theta + lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// Nothing is modified if any gradient is non-finite.
pub fn adamw_step<T: Scalar>(params: &mut [&mut Param<T>], cfg: &AdamWConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument("AdamW step counter starts at 1".into()));
    }
    for p in params.iter() {
        if let Some(index) = p.grad.data().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: p.name.clone(),
                index,
            });
        }
    }
    let c = T::from_f64_lossy;
    let (b1, b2) = (c(cfg.beta1), c(cfg.beta2));
    let (one_b1, one_b2) = (c(1.0 - cfg.beta1), c(1.0 - cfg.beta2));
    let bc1 = c(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = c(1.0 - cfg.beta2.powi(t as i32));
    let (lr, eps, decay) = (c(cfg.lr), c(cfg.eps), c(cfg.lr * cfg.weight_decay));
    for p in params.iter_mut() {
        let Param { value, grad, m, v, .. } = &mut **p;
        for (((w, g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + one_b1 * *g;
            *v = b2 * *v + one_b2 * *g * *g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w = *w - decay * *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// AdamW with its own step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0 }
    }

    pub fn step<T: Scalar>(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        adamw_step(params, &self.config, self.step + 1)?;
        self.step += 1;
        Ok(())
    }
}

/// Rescale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the applied factor (1.0 when untouched).
pub fn clip_grad_norm<T: Scalar>(params: &mut [&mut Param<T>], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .map(|g| {
            let g = g.to_f64().unwrap_or(f64::INFINITY);
            g * g
        })
        .sum::<f64>()
        .sqrt();
    if norm <= max_norm || !norm.is_finite() {
        return 1.0;
    }
    let scale = max_norm / norm;
    let s = T::from_f64_lossy(scale);
    for p in params.iter_mut() {
        p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
    }
    scale
}

/// Halve the learning rate after `patience` consecutive epochs without a
/// validation-loss improvement larger than `threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    #[serde(skip)]
    best: Option<f64>,
    #[serde(skip)]
    bad_epochs: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new(3e-4)
    }
}

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            factor: 0.5,
            patience: 3,
            threshold: 1e-4,
            min_lr: 1e-6,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Feed one validation loss; returns the (possibly reduced) learning rate.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        match self.best {
            Some(best) if val_loss >= best - self.threshold => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    self.lr = (self.lr * self.factor).max(self.min_lr);
                    self.bad_epochs = 0;
                }
            }
            _ => {
                self.best = Some(val_loss);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(v: f64, g: f64) -> Param<f64> {
        let mut p = Param::new("w", Tensor::full(&[1], v));
        p.grad = Tensor::full(&[1], g);
        p
    }

    #[test]
    fn single_step_value() {
        let mut p = scalar_param(1.0, 1.0);
        adamw_step(&mut [&mut p], &AdamWConfig::default(), 1).unwrap();
        assert!((p.value.data()[0] - 0.99969997).abs() < 1e-8, "{}", p.value.data()[0]);
    }

    #[test]
    fn zero_grad_without_decay_is_identity() {
        let mut p = scalar_param(0.7, 0.0);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for t in 1..5 {
            adamw_step(&mut [&mut p], &cfg, t).unwrap();
        }
        assert_eq!(p.value.data(), &[0.7]);
    }

    #[test]
    fn non_finite_gradient_aborts_without_change() {
        let mut a = scalar_param(1.0, 1.0);
        let mut b = scalar_param(2.0, f64::NAN);
        let err = adamw_step(&mut [&mut a, &mut b], &AdamWConfig::default(), 1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 0, .. }));
        assert_eq!(a.value.data(), &[1.0]);
    }

    #[test]
    fn clipping_examples() {
        let mut p = Param::new("g", Tensor::<f64>::zeros(&[2]));
        p.grad = Tensor::new(vec![2], vec![6.0, 8.0]).unwrap();
        assert_eq!(clip_grad_norm(&mut [&mut p], 5.0), 0.5);
        assert_eq!(p.grad.data(), &[3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut [&mut p], 5.0), 1.0);
        assert_eq!(p.grad.data(), &[3.0, 4.0]);
        p.grad = Tensor::new(vec![2], vec![1.8, 2.4]).unwrap();
        assert_eq!(clip_grad_norm(&mut [&mut p], 5.0), 1.0);
    }

    #[test]
    fn plateau_rules() {
        let mut s = PlateauScheduler::new(1e-3);
        for l in [1.0, 0.9, 0.8] {
            assert_eq!(s.step(l), 1e-3);
        }
        let mut s = PlateauScheduler::new(1e-3);
        s.step(1.0);
        assert_eq!(s.step(1.0), 1e-3);
        assert_eq!(s.step(1.0), 1e-3);
        assert_eq!(s.step(1.0), 5e-4);

        let mut s = PlateauScheduler::new(1e-6);
        for _ in 0..10 {
            s.step(1.0);
        }
        assert_eq!(s.lr, 1e-6);
    }
}
