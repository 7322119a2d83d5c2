use super::{Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Batch normalization over `[B,C]` features.
///
/// Train mode normalizes with the biased batch variance and folds the
/// unbiased variance into the running estimate with `momentum`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm1d<T: Scalar = f32> {
    pub name: String,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

/// Values saved by the train-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T: Scalar> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        match x.shape() {
            [b, c] if *c == self.channels() => Ok((*b, *c)),
            s => Err(Error::Shape(format!(
                "batch norm expects [B,{}], got {s:?}",
                self.channels()
            ))),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let (b, c) = self.check(x)?;
        if b < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch norm in train mode needs at least 2 samples, got {b}"
            )));
        }
        let bn = T::from_usize(b).expect("batch");
        let eps = T::from_f64_lossy(self.eps);
        let mom = T::from_f64_lossy(self.momentum);
        let d = x.data();
        let mut mean = vec![T::zero(); c];
        for row in d.chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += *v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / bn);
        let mut var = vec![T::zero(); c];
        for row in d.chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (*v - *m) * (*v - *m);
            }
        }
        let unbiased: Vec<T> = var
            .iter()
            .map(|s| *s / T::from_usize(b - 1).expect("batch"))
            .collect();
        var.iter_mut().for_each(|s| *s = *s / bn);
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();

        let mut xhat = Vec::with_capacity(b * c);
        let mut y = Vec::with_capacity(b * c);
        let (g, be) = (self.gamma.value.data(), self.beta.value.data());
        for row in d.chunks_exact(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                y.push(g[j] * h + be[j]);
            }
        }
        for j in 0..c {
            let rm = &mut self.running_mean.data_mut()[j];
            *rm = (T::one() - mom) * *rm + mom * mean[j];
            let rv = &mut self.running_var.data_mut()[j];
            *rv = (T::one() - mom) * *rv + mom * unbiased[j];
        }
        Ok((
            Tensor::new(vec![b, c], y)?,
            BnCache {
                xhat: Tensor::new(vec![b, c], xhat)?,
                inv_std,
            },
        ))
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c) = self.check(x)?;
        let eps = T::from_f64_lossy(self.eps);
        let scale: Vec<T> = (0..c)
            .map(|j| self.gamma.value.data()[j] / (self.running_var.data()[j] + eps).sqrt())
            .collect();
        let data = x
            .data()
            .chunks_exact(c)
            .flat_map(|row| {
                (0..c).map(|j| {
                    (row[j] - self.running_mean.data()[j]) * scale[j] + self.beta.value.data()[j]
                })
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c) = self.check(dy)?;
        let bn = T::from_usize(b).expect("batch");
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (gr, hr) in dy.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
            for j in 0..c {
                sum_dy[j] += gr[j];
                sum_dy_xhat[j] += gr[j] * hr[j];
            }
        }
        for j in 0..c {
            self.gamma.grad.data_mut()[j] += sum_dy_xhat[j];
            self.beta.grad.data_mut()[j] += sum_dy[j];
        }
        let g = self.gamma.value.data();
        let mut dx = Vec::with_capacity(b * c);
        for (gr, hr) in dy.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
            for j in 0..c {
                let k = g[j] * cache.inv_std[j] / bn;
                dx.push(k * (bn * gr[j] - sum_dy[j] - hr[j] * sum_dy_xhat[j]));
            }
        }
        Tensor::new(vec![b, c], dx)
    }

    pub fn cast<U: Scalar>(&self) -> BatchNorm1d<U> {
        BatchNorm1d {
            name: self.name.clone(),
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

impl<T: Scalar> Module<T> for BatchNorm1d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            (format!("{}.running_mean", self.name), &self.running_mean),
            (format!("{}.running_var", self.name), &self.running_var),
        ]
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            (format!("{}.running_mean", self.name), &mut self.running_mean),
            (format!("{}.running_var", self.name), &mut self.running_var),
        ]
    }
}
