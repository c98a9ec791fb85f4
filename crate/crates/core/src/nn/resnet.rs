//! ResNet-50 feature extractor (bottleneck blocks, stride on the 3×3 conv).
//!
//! Parameter names follow the torchvision layout (`conv1.weight`,
//! `layer3.4.bn2.running_var`, `layer1.0.downsample.0.weight`, ...) so that
//! converted ImageNet weights load by name. The classification layer is not
//! part of the extractor; fusion models attach their own.

use rand::Rng;

use super::conv::ConvInit;
use super::{join, BatchNorm2d, Conv2d, GlobalAvgPool, MaxPool2d, Mode, Module, Param, Relu};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const EXPANSION: usize = 4;
const STAGE_BLOCKS: [usize; 4] = [3, 4, 6, 3];
const STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];

#[derive(Clone, Debug)]
pub struct Bottleneck<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu1: Relu,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    relu2: Relu,
    conv3: Conv2d<T>,
    bn3: BatchNorm2d<T>,
    downsample: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    relu_out: Relu,
}

impl<T: Scalar> Bottleneck<T> {
    fn new<R: Rng + ?Sized>(in_planes: usize, width: usize, stride: usize, rng: &mut R) -> Self {
        let out = width * EXPANSION;
        let downsample = (stride != 1 || in_planes != out).then(|| {
            (
                Conv2d::new(in_planes, out, 1, stride, 0, false, ConvInit::KaimingFanOut, rng),
                BatchNorm2d::new(out),
            )
        });
        Self {
            conv1: Conv2d::new(in_planes, width, 1, 1, 0, false, ConvInit::KaimingFanOut, rng),
            bn1: BatchNorm2d::new(width),
            relu1: Relu::new(),
            conv2: Conv2d::new(width, width, 3, stride, 1, false, ConvInit::KaimingFanOut, rng),
            bn2: BatchNorm2d::new(width),
            relu2: Relu::new(),
            conv3: Conv2d::new(width, out, 1, 1, 0, false, ConvInit::KaimingFanOut, rng),
            bn3: BatchNorm2d::new(out),
            downsample,
            relu_out: Relu::new(),
        }
    }
}

impl<T: Scalar> Module<T> for Bottleneck<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let x = self.conv1.forward(input, mode);
        let x = self.bn1.forward(&x, mode);
        let x = self.relu1.forward(&x, mode);
        let x = self.conv2.forward(&x, mode);
        let x = self.bn2.forward(&x, mode);
        let x = self.relu2.forward(&x, mode);
        let x = self.conv3.forward(&x, mode);
        let mut x = self.bn3.forward(&x, mode);
        match &mut self.downsample {
            Some((conv, bn)) => {
                let shortcut = conv.forward(input, mode);
                x.add_assign(&bn.forward(&shortcut, mode));
            }
            None => x.add_assign(input),
        }
        self.relu_out.forward(&x, mode)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Tensor<T> {
        let g = Module::<T>::backward(&mut self.relu_out, grad_output);
        let mut shortcut = match &mut self.downsample {
            Some((conv, bn)) => conv.backward(&bn.backward(&g)),
            None => g.clone(),
        };
        let x = self.bn3.backward(&g);
        let x = self.conv3.backward(&x);
        let x = Module::<T>::backward(&mut self.relu2, &x);
        let x = self.bn2.backward(&x);
        let x = self.conv2.backward(&x);
        let x = Module::<T>::backward(&mut self.relu1, &x);
        let x = self.bn1.backward(&x);
        let x = self.conv1.backward(&x);
        shortcut.add_assign(&x);
        shortcut
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        self.conv3.visit_params(&join(prefix, "conv3"), f);
        self.bn3.visit_params(&join(prefix, "bn3"), f);
        if let Some((conv, bn)) = &self.downsample {
            conv.visit_params(&join(prefix, "downsample.0"), f);
            bn.visit_params(&join(prefix, "downsample.1"), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_params_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_params_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_params_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_params_mut(&join(prefix, "bn2"), f);
        self.conv3.visit_params_mut(&join(prefix, "conv3"), f);
        self.bn3.visit_params_mut(&join(prefix, "bn3"), f);
        if let Some((conv, bn)) = &mut self.downsample {
            conv.visit_params_mut(&join(prefix, "downsample.0"), f);
            bn.visit_params_mut(&join(prefix, "downsample.1"), f);
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResNet50<T> {
    pub(crate) conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu: Relu,
    maxpool: MaxPool2d,
    stages: Vec<Vec<Bottleneck<T>>>,
    pool: GlobalAvgPool,
}

impl<T: Scalar> ResNet50<T> {
    pub const FEATURE_DIM: usize = 512 * EXPANSION;

    /// Randomly initialized three-channel extractor.
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut conv1 = Conv2d::new(3, 64, 7, 2, 3, false, ConvInit::KaimingFanOut, rng);
        conv1.skip_input_grad = true;
        let mut in_planes = 64;
        let mut stages = Vec::with_capacity(4);
        for (stage, (&blocks, &width)) in STAGE_BLOCKS.iter().zip(&STAGE_WIDTHS).enumerate() {
            let stride = if stage == 0 { 1 } else { 2 };
            let mut layer = Vec::with_capacity(blocks);
            for b in 0..blocks {
                layer.push(Bottleneck::new(in_planes, width, if b == 0 { stride } else { 1 }, rng));
                in_planes = width * EXPANSION;
            }
            stages.push(layer);
        }
        Self {
            conv1,
            bn1: BatchNorm2d::new(64),
            relu: Relu::new(),
            maxpool: MaxPool2d::new(3, 2, 1),
            stages,
            pool: GlobalAvgPool::new(),
        }
    }
}

impl<T: Scalar> Module<T> for ResNet50<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let x = self.conv1.forward(input, mode);
        let x = self.bn1.forward(&x, mode);
        let x = self.relu.forward(&x, mode);
        let mut x = self.maxpool.forward(&x, mode);
        for block in self.stages.iter_mut().flatten() {
            x = block.forward(&x, mode);
        }
        self.pool.forward(&x, mode)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Tensor<T> {
        let mut g = Module::<T>::backward(&mut self.pool, grad_output);
        for block in self.stages.iter_mut().flatten().rev() {
            g = block.backward(&g);
        }
        let g = Module::<T>::backward(&mut self.maxpool, &g);
        let g = Module::<T>::backward(&mut self.relu, &g);
        let g = self.bn1.backward(&g);
        self.conv1.backward(&g)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                block.visit_params(&join(prefix, &format!("layer{}.{b}", s + 1)), f);
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_params_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_params_mut(&join(prefix, "bn1"), f);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_params_mut(&join(prefix, &format!("layer{}.{b}", s + 1)), f);
            }
        }
    }
}
