use rand::Rng;

use super::{kaiming_uniform, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// 2-D cross-correlation over `[B,C,H,W]` with square kernels `[F,C,k,k]`.
///
/// Output extents follow the floor convention
/// `H' = floor((H + 2p - k) / s) + 1`; trailing input rows or columns that do
/// not fit a full stride are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T: Scalar = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self::from_parts(
            name,
            kaiming_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            Tensor::zeros(&[out_channels]),
            stride,
            padding,
        )
        .expect("consistent shapes")
    }

    pub fn from_parts(
        name: &str,
        weight: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
        }
        match (weight.shape(), bias.shape()) {
            ([f, _, k1, k2], [b]) if f == b && k1 == k2 => Ok(Self {
                weight: Param::new(format!("{name}.weight"), weight),
                bias: Param::new(format!("{name}.bias"), bias),
                stride,
                padding,
            }),
            (w, b) => Err(Error::Shape(format!("conv weight {w:?} vs bias {b:?}"))),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (k, p, s) = (self.kernel(), self.padding, self.stride);
        if h + 2 * p < k || w + 2 * p < k {
            return Err(Error::Shape(format!(
                "conv kernel {k} larger than padded input {h}x{w} (pad {p})"
            )));
        }
        Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, Geometry)> {
        let (b, c, h, w) = match x.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => return Err(Error::Shape(format!("conv expects [B,C,H,W], got {s:?}"))),
        };
        if c != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let (ho, wo) = self.output_hw(h, w)?;
        Ok((
            b,
            Geometry {
                c,
                h,
                w,
                k: self.kernel(),
                ho,
                wo,
            },
        ))
    }

    /// Output columns `[lo, hi)` whose input column `ox*s + kj - p` is inside the image.
    fn valid_cols(&self, kj: usize, g: &Geometry) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if p > kj { (p - kj).div_ceil(s) } else { 0 };
        let hi = if g.w + p > kj { ((g.w - 1 + p - kj) / s + 1).min(g.wo) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col(&self, img: &[T], g: &Geometry, cols: &mut [T]) {
        let (s, p) = (self.stride, self.padding);
        let n = g.ho * g.wo;
        for c in 0..g.c {
            let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ki in 0..g.k {
                for kj in 0..g.k {
                    let row = (c * g.k + ki) * g.k + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    let (lo, hi) = self.valid_cols(kj, g);
                    for oy in 0..g.ho {
                        let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        let iy = (oy * s + ki).wrapping_sub(p);
                        if iy >= g.h {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy * g.w..(iy + 1) * g.w];
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        let start = lo * s + kj - p;
                        for (v, x) in out_row[lo..hi].iter_mut().zip(src[start..].iter().step_by(s)) {
                            *v = *x;
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], g: &Geometry, img: &mut [T]) {
        let (s, p) = (self.stride, self.padding);
        let n = g.ho * g.wo;
        for c in 0..g.c {
            let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ki in 0..g.k {
                for kj in 0..g.k {
                    let row = (c * g.k + ki) * g.k + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    let (lo, hi) = self.valid_cols(kj, g);
                    for oy in 0..g.ho {
                        let iy = (oy * s + ki).wrapping_sub(p);
                        if iy >= g.h || lo == hi {
                            continue;
                        }
                        let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                        let start = lo * s + kj - p;
                        let from = &src[oy * g.wo + lo..oy * g.wo + hi];
                        for (d, v) in dst[start..].iter_mut().step_by(s).zip(from) {
                            *d += *v;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, g) = self.geometry(x)?;
        let f = self.out_channels();
        let ckk = g.c * g.k * g.k;
        let n = g.ho * g.wo;
        let mut cols = vec![T::zero(); ckk * n];
        let mut out = vec![T::zero(); batch * f * n];
        let bias = self.bias.value.data();
        for b in 0..batch {
            self.im2col(x.outer(b), &g, &mut cols);
            let y = &mut out[b * f * n..(b + 1) * f * n];
            for (fi, row) in y.chunks_exact_mut(n).enumerate() {
                row.fill(bias[fi]);
            }
            T::gemm(
                f,
                ckk,
                n,
                T::one(),
                self.weight.value.data(),
                ckk as isize,
                1,
                &cols,
                n as isize,
                1,
                T::one(),
                y,
                n as isize,
                1,
            );
        }
        Tensor::new(vec![batch, f, g.ho, g.wo], out)
    }

    /// Accumulates kernel and bias gradients; returns `dL/dx` when requested.
    pub fn backward(
        &mut self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let (batch, g) = self.geometry(x)?;
        let f = self.out_channels();
        if dy.shape() != [batch, f, g.ho, g.wo] {
            return Err(Error::Shape(format!(
                "conv backward: dy {:?}, expected [{batch},{f},{},{}]",
                dy.shape(),
                g.ho,
                g.wo
            )));
        }
        let ckk = g.c * g.k * g.k;
        let n = g.ho * g.wo;
        let mut cols = vec![T::zero(); ckk * n];
        let mut dcols = vec![T::zero(); if need_input_grad { ckk * n } else { 0 }];
        let mut dx = need_input_grad.then(|| vec![T::zero(); x.len()]);
        for b in 0..batch {
            let dyb = dy.outer(b);
            self.im2col(x.outer(b), &g, &mut cols);
            T::gemm(
                f,
                n,
                ckk,
                T::one(),
                dyb,
                n as isize,
                1,
                &cols,
                1,
                n as isize,
                T::one(),
                self.weight.grad.data_mut(),
                ckk as isize,
                1,
            );
            for (gb, row) in self.bias.grad.data_mut().iter_mut().zip(dyb.chunks_exact(n)) {
                *gb += row.iter().copied().sum::<T>();
            }
            if let Some(dx) = dx.as_mut() {
                T::gemm(
                    ckk,
                    f,
                    n,
                    T::one(),
                    self.weight.value.data(),
                    1,
                    ckk as isize,
                    dyb,
                    n as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    n as isize,
                    1,
                );
                let stride = x.len() / batch;
                self.col2im(&dcols, &g, &mut dx[b * stride..(b + 1) * stride]);
            }
        }
        dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()
    }

    /// Multiply-accumulates for one sample of spatial size `h x w`.
    pub fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let (ho, wo) = self.output_hw(h, w)?;
        let k = self.kernel();
        Ok((self.out_channels() * self.in_channels() * k * k * ho * wo) as u64)
    }

    pub fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop cross-correlation.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: usize, p: usize) -> Vec<f64> {
        let [bn, c, h, wd] = x.shape() else { panic!() };
        let [f, _, k, _] = w.shape() else { panic!() };
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (wd + 2 * p - k) / s + 1;
        let mut out = vec![0.0; bn * f * ho * wo];
        for bi in 0..*bn {
            for fi in 0..*f {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[fi];
                        for ci in 0..*c {
                            for ki in 0..*k {
                                for kj in 0..*k {
                                    let iy = (oy * s + ki) as isize - p as isize;
                                    let ix = (ox * s + kj) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < *h && (ix as usize) < *wd {
                                        acc += x.data()[((bi * c + ci) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((fi * c + ci) * k + ki) * k + kj];
                                    }
                                }
                            }
                        }
                        out[((bi * f + fi) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn unit_1x1_kernel_is_identity() {
        let conv = Conv2d::from_parts(
            "c",
            Tensor::full(&[1, 1, 1, 1], 1.0f32),
            Tensor::zeros(&[1]),
            1,
            0,
        )
        .unwrap();
        let x = Tensor::from_fn(&[1, 1, 3, 4], |i| i as f32 - 5.0);
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn ones_kernel_sums() {
        let conv = Conv2d::from_parts(
            "c",
            Tensor::full(&[1, 1, 3, 3], 1.0f32),
            Tensor::zeros(&[1]),
            1,
            0,
        )
        .unwrap();
        let y = conv.forward(&Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn matches_direct_loop_with_stride_and_padding() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for &(h, w, s, p) in &[(7, 6, 2, 1), (8, 8, 2, 1), (5, 5, 1, 1), (6, 9, 3, 0)] {
            let conv: Conv2d<f64> = Conv2d::new("c", 2, 3, 3, s, p, &mut rng);
            let mut conv = conv;
            conv.bias.value = Tensor::from_fn(&[3], |i| i as f64 * 0.1);
            let x = Tensor::from_fn(&[2, 2, h, w], |_| rng.gen_range(-1.0..1.0));
            let y = conv.forward(&x).unwrap();
            let want = naive(&x, &conv.weight.value, conv.bias.value.data(), s, p);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_larger_than_input_is_an_error() {
        let mut rng = rand::thread_rng();
        let conv: Conv2d<f32> = Conv2d::new("c", 1, 1, 5, 1, 0, &mut rng);
        assert!(conv.forward(&Tensor::zeros(&[1, 1, 3, 3])).is_err());
    }

    #[test]
    fn macs_arithmetic() {
        let mut rng = rand::thread_rng();
        let conv: Conv2d<f32> = Conv2d::new("c", 3, 8, 3, 1, 1, &mut rng);
        assert_eq!(conv.macs(224, 224).unwrap(), 10_838_016);
    }
}
