//! Minimal layer library with explicit forward caches and hand-written
//! backward passes.
//!
//! Layers cache what their backward pass needs only in [`Mode::Train`];
//! [`Mode::Eval`] forwards are side-effect free apart from batch-norm reading
//! its running statistics.

mod activation;
mod backbone;
mod conv;
mod linear;
mod norm;
mod pool;
mod resnet;
mod tiny;

pub use activation::Relu;
pub use backbone::Backbone;
pub use conv::{Conv2d, ConvInit};
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use pool::{GlobalAvgPool, MaxPool2d};
pub use resnet::{Bottleneck, ResNet50};
pub use tiny::TinyCnn;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A tensor owned by a layer, with a lazily allocated gradient.
///
/// Non-trainable params (batch-norm running statistics) are saved in
/// checkpoints but skipped by the optimizer and by parameter counts.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    grad: Vec<T>,
    trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self {
            value,
            grad: Vec::new(),
            trainable: true,
        }
    }

    pub fn buffer(value: Tensor<T>) -> Self {
        Self {
            value,
            grad: Vec::new(),
            trainable: false,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Accumulated gradient; empty until the first backward pass touches it.
    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![T::zero(); self.value.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Replaces the value, dropping any gradient of the old shape.
    pub fn set_value(&mut self, value: Tensor<T>) {
        self.value = value;
        self.grad.clear();
    }
}

/// A differentiable layer or block.
pub trait Module<T: Scalar> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T>;

    /// Propagates `grad_output` back through the most recent training-mode
    /// forward, accumulating parameter gradients, and returns the input gradient.
    fn backward(&mut self, grad_output: &Tensor<T>) -> Tensor<T>;

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    /// Number of trainable scalars.
    fn num_params(&self) -> usize {
        let mut total = 0;
        self.visit_params("", &mut |_, p| {
            if p.is_trainable() {
                total += p.value.len();
            }
        });
        total
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }
}

/// Joins a dotted parameter path.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
