use super::{Mode, Module, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Max pooling; padded positions never win.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn output_side(&self, side: usize) -> usize {
        (side + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1
    }
}

impl<T: Scalar> Module<T> for MaxPool2d {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let (n, c, h, w) = input.dims4();
        let (oh, ow) = (self.output_side(h), self.output_side(w));
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let src = &input.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for ki in 0..self.kernel {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..self.kernel {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if best_idx == usize::MAX || src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data_mut()[(plane * oh + oy) * ow + ox] = best;
                    argmax.push(plane * h * w + best_idx);
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some((input.shape().to_vec(), argmax));
        }
        out
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Tensor<T> {
        let (shape, argmax) = self.cache.take().expect("max-pool backward without training forward");
        let mut grad_input = Tensor::zeros(&shape);
        for (&src, &g) in argmax.iter().zip(grad_output.data()) {
            grad_input.data_mut()[src] += g;
        }
        grad_input
    }

    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param<T>)) {}
}

/// Averages each channel plane, `(n, c, h, w) → (n, c)`.
#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Module<T> for GlobalAvgPool {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let (n, c, h, w) = input.dims4();
        let inv = T::lit(1.0 / (h * w) as f64);
        let data = input
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        if mode == Mode::Train {
            self.shape = Some(input.shape().to_vec());
        }
        Tensor::from_vec(&[n, c], data).expect("pooled shape")
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Tensor<T> {
        let shape = self.shape.take().expect("avg-pool backward without training forward");
        let plane = shape[2] * shape[3];
        let inv = T::lit(1.0 / plane as f64);
        let mut data = Vec::with_capacity(shape.iter().product());
        for &g in grad_output.data() {
            data.extend(std::iter::repeat_n(g * inv, plane));
        }
        Tensor::from_vec(&shape, data).expect("pooled gradient shape")
    }

    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param<T>)) {}
}
