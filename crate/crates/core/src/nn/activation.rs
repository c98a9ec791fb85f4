use super::{Mode, Module, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Module<T> for Relu {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T> {
        if mode == Mode::Train {
            self.mask = Some(input.data().iter().map(|&x| x > T::zero()).collect());
        }
        input.map(|x| if x > T::zero() { x } else { T::zero() })
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Tensor<T> {
        let mask = self.mask.take().expect("relu backward without training forward");
        let mut grad = grad_output.clone();
        for (g, keep) in grad.data_mut().iter_mut().zip(mask) {
            if !keep {
                *g = T::zero();
            }
        }
        grad
    }

    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param<T>)) {}
}
