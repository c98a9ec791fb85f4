use rand::Rng;

use super::{join, Mode, Module, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Affine map `y = x Wᵀ + b` over rows of a `(batch, in)` matrix.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform init on `±1/√in`, the usual default for fully connected layers.
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            weight: Param::new(Tensor::uniform(&[out_features, in_features], bound, rng)),
            bias: Param::new(Tensor::uniform(&[out_features], bound, rng)),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let (batch, fan_in) = input.dims2();
        assert_eq!(fan_in, self.in_features(), "linear input width");
        let out_features = self.out_features();
        let mut out = Tensor::zeros(&[batch, out_features]);
        for row in out.data_mut().chunks_mut(out_features) {
            row.copy_from_slice(self.bias.value.data());
        }
        T::gemm(
            false,
            true,
            batch,
            out_features,
            fan_in,
            T::one(),
            input.data(),
            self.weight.value.data(),
            T::one(),
            out.data_mut(),
        );
        if mode == Mode::Train {
            self.input = Some(input.clone());
        }
        out
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Tensor<T> {
        let input = self.input.take().expect("linear backward without training forward");
        let (batch, fan_in) = input.dims2();
        let out_features = self.out_features();
        T::gemm(
            true,
            false,
            out_features,
            fan_in,
            batch,
            T::one(),
            grad_output.data(),
            input.data(),
            T::one(),
            self.weight.grad_mut(),
        );
        let bias_grad = self.bias.grad_mut();
        for row in grad_output.data().chunks(out_features) {
            for (g, &d) in bias_grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut grad_input = Tensor::zeros(&[batch, fan_in]);
        T::gemm(
            false,
            false,
            batch,
            fan_in,
            out_features,
            T::one(),
            grad_output.data(),
            self.weight.value.data(),
            T::zero(),
            grad_input.data_mut(),
        );
        grad_input
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
