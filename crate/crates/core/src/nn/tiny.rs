use rand::Rng;

use super::conv::ConvInit;
use super::{join, Conv2d, GlobalAvgPool, MaxPool2d, Mode, Module, Param, Relu};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const WIDTHS: [usize; 2] = [8, 16];

/// Three conv blocks (3×3 conv + ReLU, pooled 2× after the first two) and a
/// global average pool. Small enough for CPU training and gradient checks.
#[derive(Clone, Debug)]
pub struct TinyCnn<T> {
    pub(crate) conv1: Conv2d<T>,
    relu1: Relu,
    pool1: MaxPool2d,
    conv2: Conv2d<T>,
    relu2: Relu,
    pool2: MaxPool2d,
    conv3: Conv2d<T>,
    relu3: Relu,
    pool: GlobalAvgPool,
}

impl<T: Scalar> TinyCnn<T> {
    /// Smallest input side that survives both pooling stages.
    pub const MIN_SIDE: usize = 4;

    pub fn new<R: Rng + ?Sized>(feature_dim: usize, rng: &mut R) -> Self {
        let mut conv1 = Conv2d::new(3, WIDTHS[0], 3, 1, 1, true, ConvInit::KaimingFanIn, rng);
        conv1.skip_input_grad = true;
        Self {
            conv1,
            relu1: Relu::new(),
            pool1: MaxPool2d::new(2, 2, 0),
            conv2: Conv2d::new(WIDTHS[0], WIDTHS[1], 3, 1, 1, true, ConvInit::KaimingFanIn, rng),
            relu2: Relu::new(),
            pool2: MaxPool2d::new(2, 2, 0),
            conv3: Conv2d::new(WIDTHS[1], feature_dim, 3, 1, 1, true, ConvInit::KaimingFanIn, rng),
            relu3: Relu::new(),
            pool: GlobalAvgPool::new(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.conv3.out_channels()
    }
}

impl<T: Scalar> Module<T> for TinyCnn<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let x = self.conv1.forward(input, mode);
        let x = self.relu1.forward(&x, mode);
        let x = self.pool1.forward(&x, mode);
        let x = self.conv2.forward(&x, mode);
        let x = self.relu2.forward(&x, mode);
        let x = self.pool2.forward(&x, mode);
        let x = self.conv3.forward(&x, mode);
        let x = self.relu3.forward(&x, mode);
        self.pool.forward(&x, mode)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Tensor<T> {
        let g = Module::<T>::backward(&mut self.pool, grad_output);
        let g = Module::<T>::backward(&mut self.relu3, &g);
        let g = self.conv3.backward(&g);
        let g = Module::<T>::backward(&mut self.pool2, &g);
        let g = Module::<T>::backward(&mut self.relu2, &g);
        let g = self.conv2.backward(&g);
        let g = Module::<T>::backward(&mut self.pool1, &g);
        let g = Module::<T>::backward(&mut self.relu1, &g);
        self.conv1.backward(&g)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.conv3.visit_params(&join(prefix, "conv3"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_params_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_params_mut(&join(prefix, "conv2"), f);
        self.conv3.visit_params_mut(&join(prefix, "conv3"), f);
    }
}
