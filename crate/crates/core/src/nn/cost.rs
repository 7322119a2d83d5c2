use super::Module;
use crate::error::Result;
use crate::tensor::Scalar;

/// Multiply-accumulate count of one forward pass for a single sample whose
/// spatial input is `h x w`. Activations, pooling and normalization count 0.
pub trait MacCount {
    fn macs(&self, h: usize, w: usize) -> Result<u64>;
}

/// Trainable element count; batch-norm running statistics are buffers and
/// are excluded.
pub fn count_params<T: Scalar, M: Module<T> + ?Sized>(model: &M) -> usize {
    model.params().iter().map(|p| p.len()).sum()
}

pub fn count_macs<M: MacCount + ?Sized>(model: &M, h: usize, w: usize) -> Result<u64> {
    model.macs(h, w)
}
