use super::{Conv2d, Mode, Module, Param, ResNet50, TinyCnn};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Convolutional feature extractor shared by all fusion strategies.
#[derive(Clone, Debug)]
pub enum Backbone<T> {
    ResNet50(Box<ResNet50<T>>),
    Tiny(TinyCnn<T>),
}

impl<T: Scalar> Backbone<T> {
    pub fn feature_dim(&self) -> usize {
        match self {
            Backbone::ResNet50(_) => ResNet50::<T>::FEATURE_DIM,
            Backbone::Tiny(net) => net.feature_dim(),
        }
    }

    pub fn first_conv(&self) -> &Conv2d<T> {
        match self {
            Backbone::ResNet50(net) => &net.conv1,
            Backbone::Tiny(net) => &net.conv1,
        }
    }

    pub fn first_conv_mut(&mut self) -> &mut Conv2d<T> {
        match self {
            Backbone::ResNet50(net) => &mut net.conv1,
            Backbone::Tiny(net) => &mut net.conv1,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.first_conv().in_channels()
    }

    pub fn min_input_side(&self) -> usize {
        match self {
            Backbone::ResNet50(_) => 1,
            Backbone::Tiny(_) => TinyCnn::<T>::MIN_SIDE,
        }
    }
}

impl<T: Scalar> Module<T> for Backbone<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T> {
        match self {
            Backbone::ResNet50(net) => net.forward(input, mode),
            Backbone::Tiny(net) => net.forward(input, mode),
        }
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Tensor<T> {
        match self {
            Backbone::ResNet50(net) => net.backward(grad_output),
            Backbone::Tiny(net) => net.backward(grad_output),
        }
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        match self {
            Backbone::ResNet50(net) => net.visit_params(prefix, f),
            Backbone::Tiny(net) => net.visit_params(prefix, f),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match self {
            Backbone::ResNet50(net) => net.visit_params_mut(prefix, f),
            Backbone::Tiny(net) => net.visit_params_mut(prefix, f),
        }
    }
}
