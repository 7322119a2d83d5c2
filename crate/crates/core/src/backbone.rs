//! Image feature extractors.
//!
//! [`TinyCnn`] fulfils the feature-extractor contract: a `[B,C,H,W]` input
//! becomes a `[B,d]` descriptor after global average pooling, and the whole
//! path is differentiable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, relu_backward, relu_in_place, Conv2d, MacCount,
    Module, Param,
};
use crate::rng::{self, Purpose};
use crate::tensor::{Scalar, Tensor};

pub const TINY_CNN_ARCH: &str = "tiny_cnn";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureExtractorSpec {
    pub in_channels: usize,
    pub feature_dim: usize,
    pub input_hw: (usize, usize),
    pub arch: String,
}

impl FeatureExtractorSpec {
    pub fn tiny(in_channels: usize, feature_dim: usize) -> Self {
        Self {
            in_channels,
            feature_dim,
            input_hw: (224, 224),
            arch: TINY_CNN_ARCH.to_string(),
        }
    }

    pub fn with_input_hw(mut self, h: usize, w: usize) -> Self {
        self.input_hw = (h, w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.in_channels) {
            return Err(Error::InvalidArgument(format!(
                "backbone input channels must be 1, 2 or 3, got {}",
                self.in_channels
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be >= 1".into()));
        }
        if self.arch != TINY_CNN_ARCH {
            return Err(Error::InvalidArgument(format!("unknown architecture {:?}", self.arch)));
        }
        Ok(())
    }
}

/// Turn a 3-channel first-layer kernel into a 1- or 2-channel one. Each new
/// input channel receives the mean of the three original channel slices.
pub fn adapt_first_layer<T: Scalar>(weights: &Tensor<T>, target_channels: usize) -> Result<Tensor<T>> {
    let (f, k1, k2) = match weights.shape() {
        [f, 3, k1, k2] => (*f, *k1, *k2),
        s => return Err(Error::Shape(format!("expected [F,3,k,k] kernel, got {s:?}"))),
    };
    if !(1..=2).contains(&target_channels) {
        return Err(Error::InvalidArgument(format!(
            "target channel count must be 1 or 2, got {target_channels}"
        )));
    }
    let taps = k1 * k2;
    let three = T::from_f64_lossy(3.0);
    let mut out = Vec::with_capacity(f * target_channels * taps);
    for filt in weights.data().chunks_exact(3 * taps) {
        let mean: Vec<T> = (0..taps)
            .map(|t| (filt[t] + filt[taps + t] + filt[2 * taps + t]) / three)
            .collect();
        for _ in 0..target_channels {
            out.extend_from_slice(&mean);
        }
    }
    Tensor::new(vec![f, target_channels, k1, k2], out)
}

/// Three stride-2 3x3 convolutions (in -> 16 -> 32 -> d), each followed by
/// ReLU, then global average pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyCnn<T: Scalar = f32> {
    pub spec: FeatureExtractorSpec,
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub conv3: Conv2d<T>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct TinyCnnCache<T: Scalar> {
    x: Tensor<T>,
    a1: Tensor<T>,
    a2: Tensor<T>,
    a3: Tensor<T>,
}

impl<T: Scalar> TinyCnnCache<T> {
    /// Last activation map before pooling, `[B,d,h,w]`.
    pub fn feature_map(&self) -> &Tensor<T> {
        &self.a3
    }
}

impl<T: Scalar> TinyCnn<T> {
    /// Kaiming-uniform kernels and zero biases drawn from `seed`. Narrow
    /// inputs start from a 3-channel stem adapted with [`adapt_first_layer`].
    pub fn new(name: &str, spec: FeatureExtractorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, Purpose::Init, 0);
        let d = spec.feature_dim;
        let mut conv1 = Conv2d::new(&format!("{name}.conv1"), 3, 16, 3, 2, 1, &mut rng);
        if spec.in_channels != 3 {
            conv1.weight.value = adapt_first_layer(&conv1.weight.value, spec.in_channels)?;
            conv1.weight = Param::new(conv1.weight.name.clone(), conv1.weight.value.clone());
        }
        let conv2 = Conv2d::new(&format!("{name}.conv2"), 16, 32, 3, 2, 1, &mut rng);
        let conv3 = Conv2d::new(&format!("{name}.conv3"), 32, d, 3, 2, 1, &mut rng);
        Ok(Self {
            spec,
            conv1,
            conv2,
            conv3,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (h, w) = self.spec.input_hw;
        match x.shape() {
            [_, c, xh, xw] if *c == self.spec.in_channels && *xh == h && *xw == w => Ok(()),
            s => Err(Error::Shape(format!(
                "backbone expects [B,{},{h},{w}], got {s:?}",
                self.spec.in_channels
            ))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, TinyCnnCache<T>)> {
        self.check_input(x)?;
        let mut a1 = self.conv1.forward(x)?;
        relu_in_place(&mut a1);
        let mut a2 = self.conv2.forward(&a1)?;
        relu_in_place(&mut a2);
        let mut a3 = self.conv3.forward(&a2)?;
        relu_in_place(&mut a3);
        let features = global_avg_pool(&a3)?;
        Ok((
            features,
            TinyCnnCache {
                x: x.clone(),
                a1,
                a2,
                a3,
            },
        ))
    }

    pub fn extract_features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x)?.0)
    }

    pub fn backward(
        &mut self,
        cache: &TinyCnnCache<T>,
        dfeatures: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let (h3, w3) = (cache.a3.shape()[2], cache.a3.shape()[3]);
        let d3 = relu_backward(&cache.a3, &global_avg_pool_backward(dfeatures, h3, w3));
        let d2 = self.conv3.backward(&cache.a2, &d3, true)?.expect("input grad");
        let d2 = relu_backward(&cache.a2, &d2);
        let d1 = self.conv2.backward(&cache.a1, &d2, true)?.expect("input grad");
        let d1 = relu_backward(&cache.a1, &d1);
        self.conv1.backward(&cache.x, &d1, need_input_grad)
    }

    pub fn cast<U: Scalar>(&self) -> TinyCnn<U> {
        TinyCnn {
            spec: self.spec.clone(),
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
            conv3: self.conv3.cast(),
        }
    }
}

impl<T: Scalar> Module<T> for TinyCnn<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.conv1.params();
        p.extend(self.conv2.params());
        p.extend(self.conv3.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.conv1.params_mut();
        p.extend(self.conv2.params_mut());
        p.extend(self.conv3.params_mut());
        p
    }
}

impl<T: Scalar> MacCount for TinyCnn<T> {
    fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let m1 = self.conv1.macs(h, w)?;
        let (h1, w1) = self.conv1.output_hw(h, w)?;
        let m2 = self.conv2.macs(h1, w1)?;
        let (h2, w2) = self.conv2.output_hw(h1, w1)?;
        Ok(m1 + m2 + self.conv3.macs(h2, w2)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::count_params;

    #[test]
    fn adaptation_rules() {
        let mut w = Vec::new();
        for c in 1..=3 {
            w.extend(std::iter::repeat_n(c as f32, 9));
        }
        let w = Tensor::new(vec![1, 3, 3, 3], w).unwrap();
        let one = adapt_first_layer(&w, 1).unwrap();
        assert_eq!(one.shape(), &[1, 1, 3, 3]);
        assert!(one.data().iter().all(|v| *v == 2.0));
        let two = adapt_first_layer(&w, 2).unwrap();
        assert_eq!(two.shape(), &[1, 2, 3, 3]);
        assert!(two.data().iter().all(|v| *v == 2.0));
        assert!(adapt_first_layer(&w, 3).is_err());
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_features() {
        let cnn = TinyCnn::<f32>::new("b", FeatureExtractorSpec::tiny(3, 64), 1).unwrap();
        let f = cnn.extract_features(&Tensor::zeros(&[4, 3, 224, 224])).unwrap();
        assert_eq!(f.shape(), &[4, 64]);
        assert!(f.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = FeatureExtractorSpec::tiny(3, 8);
        let a = TinyCnn::<f32>::new("b", spec.clone(), 5).unwrap();
        let b = TinyCnn::<f32>::new("b", spec.clone(), 5).unwrap();
        let c = TinyCnn::<f32>::new("b", spec, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.conv1.weight.value, c.conv1.weight.value);
        for conv in [&a.conv1, &a.conv2, &a.conv3] {
            let fan_in = conv.in_channels() * 9;
            let bound = (6.0 / fan_in as f64).sqrt() as f32;
            assert!(conv.weight.value.data().iter().all(|v| v.abs() <= bound));
            assert!(conv.bias.value.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn parameter_count_closed_form() {
        for (c, d) in [(1, 64), (2, 64), (3, 64), (3, 1280)] {
            let cnn = TinyCnn::<f32>::new("b", FeatureExtractorSpec::tiny(c, d), 0).unwrap();
            let want = (16 * c * 9 + 16) + (32 * 16 * 9 + 32) + (d * 32 * 9 + d);
            assert_eq!(count_params(&cnn), want);
        }
    }

    #[test]
    fn rejects_wrong_channels() {
        let cnn = TinyCnn::<f32>::new("b", FeatureExtractorSpec::tiny(1, 8).with_input_hw(8, 8), 0).unwrap();
        assert!(cnn.extract_features(&Tensor::zeros(&[1, 3, 8, 8])).is_err());
        assert!(cnn.extract_features(&Tensor::zeros(&[1, 1, 8, 8])).is_ok());
    }
}
