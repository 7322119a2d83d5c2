//! Deterministic neural-network numerics with hand-written backward passes.
//!
//! Layers are generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks.

mod activation;
mod batchnorm;
mod conv;
mod cost;
mod dropout;
pub mod gradcheck;
mod init;
mod linear;
mod loss;
mod optim;

pub use activation::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, relu_in_place, sigmoid,
    sigmoid_backward,
};
pub use batchnorm::{BatchNorm1d, BnCache};
pub use conv::Conv2d;
pub use cost::{count_macs, count_params, MacCount};
pub use dropout::{dropout, dropout_backward};
pub use init::kaiming_uniform;
pub use linear::Linear;
pub use loss::{
    compute_class_weights, cross_entropy, softmax, weighted_softmax_ce, CLASS_WEIGHT_MAX,
    CLASS_WEIGHT_MIN,
};
pub use optim::{adamw_step, clip_grad_norm, AdamW, AdamWConfig, PlateauScheduler};

use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor with its gradient and AdamW moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
            m: self.m.cast(),
            v: self.v.cast(),
        }
    }
}

/// Anything that owns parameters.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    /// Non-trainable state (batch-norm running statistics).
    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}
