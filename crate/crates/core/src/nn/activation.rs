use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_in_place(&mut y);
    y
}

pub fn relu_in_place<T: Scalar>(x: &mut Tensor<T>) {
    x.data_mut().iter_mut().for_each(|v| {
        if !(*v > T::zero()) {
            *v = T::zero()
        }
    });
}

/// Gradient through ReLU given its output `y`.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(y, g)| if *y > T::zero() { *g } else { T::zero() })
        .collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

/// Logistic sigmoid. Outputs are kept strictly inside `(0, 1)` even where the
/// exact value rounds to an endpoint.
pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let lo = T::min_positive_value();
    let hi = T::one() - T::epsilon() / (T::one() + T::one());
    let data = x
        .data()
        .iter()
        .map(|&v| {
            let s = if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            };
            s.max(lo).min(hi)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient through the sigmoid given its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

/// Mean over the spatial axes: `[B,C,H,W] -> [B,C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = match x.shape() {
        [b, c, h, w] => (*b, *c, *h, *w),
        s => return Err(Error::Shape(format!("pooling expects [B,C,H,W], got {s:?}"))),
    };
    let n = T::from_usize(h * w).expect("size");
    let data = x
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() / n)
        .collect();
    Tensor::new(vec![b, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (b, c) = (dy.shape()[0], dy.shape()[1]);
    let n = T::from_usize(h * w).expect("size");
    let mut out = Vec::with_capacity(b * c * h * w);
    for &g in dy.data() {
        out.extend(std::iter::repeat_n(g / n, h * w));
    }
    Tensor::new(vec![b, c, h, w], out).expect("shape")
}
