use rand::Rng;

use super::{kaiming_uniform, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Fully connected layer `y = x W^T + b` with `W: [out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Scalar = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self::from_parts(
            name,
            kaiming_uniform(&[outputs, inputs], inputs, rng),
            Tensor::zeros(&[outputs]),
        )
        .expect("consistent shapes")
    }

    pub fn from_parts(name: &str, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        match (weight.shape(), bias.shape()) {
            ([o, _], [b]) if o == b => Ok(Self {
                weight: Param::new(format!("{name}.weight"), weight),
                bias: Param::new(format!("{name}.bias"), bias),
            }),
            (w, b) => Err(Error::Shape(format!("linear weight {w:?} vs bias {b:?}"))),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (inp, out) = (self.inputs(), self.outputs());
        let batch = match x.shape() {
            [b, i] if *i == inp => *b,
            s => return Err(Error::Shape(format!("linear expects [B,{inp}], got {s:?}"))),
        };
        let mut y = Vec::with_capacity(batch * out);
        for _ in 0..batch {
            y.extend_from_slice(self.bias.value.data());
        }
        T::gemm(
            batch,
            inp,
            out,
            T::one(),
            x.data(),
            inp as isize,
            1,
            self.weight.value.data(),
            1,
            inp as isize,
            T::one(),
            &mut y,
            out as isize,
            1,
        );
        Tensor::new(vec![batch, out], y)
    }

    /// Accumulates weight and bias gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (inp, out) = (self.inputs(), self.outputs());
        let batch = x.shape()[0];
        if dy.shape() != [batch, out] {
            return Err(Error::Shape(format!(
                "linear backward: dy {:?}, expected [{batch},{out}]",
                dy.shape()
            )));
        }
        T::gemm(
            out,
            batch,
            inp,
            T::one(),
            dy.data(),
            1,
            out as isize,
            x.data(),
            inp as isize,
            1,
            T::one(),
            self.weight.grad.data_mut(),
            inp as isize,
            1,
        );
        let db = self.bias.grad.data_mut();
        for row in dy.data().chunks_exact(out) {
            for (g, v) in db.iter_mut().zip(row) {
                *g += *v;
            }
        }
        let mut dx = vec![T::zero(); batch * inp];
        T::gemm(
            batch,
            out,
            inp,
            T::one(),
            dy.data(),
            out as isize,
            1,
            self.weight.value.data(),
            inp as isize,
            1,
            T::zero(),
            &mut dx,
            inp as isize,
            1,
        );
        Tensor::new(vec![batch, inp], dx)
    }

    pub fn macs(&self) -> u64 {
        (self.inputs() * self.outputs()) as u64
    }

    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
