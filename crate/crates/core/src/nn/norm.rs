use super::{join, Mode, Module, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel batch normalization with running statistics for evaluation.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    eps: f64,
    momentum: f64,
    cache: Option<Cache<T>>,
}

#[derive(Clone, Debug)]
struct Cache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            weight: Param::new(Tensor::full(&[channels], T::one())),
            bias: Param::new(Tensor::zeros(&[channels])),
            running_mean: Param::buffer(Tensor::zeros(&[channels])),
            running_var: Param::buffer(Tensor::full(&[channels], T::one())),
            eps: 1e-5,
            momentum: 0.1,
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.weight.value.len()
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let (n, c, h, w) = input.dims4();
        assert_eq!(c, self.channels(), "batch-norm channels");
        let plane = h * w;
        let count = n * plane;
        let eps = T::lit(self.eps);
        let (mean, var): (Vec<T>, Vec<T>) = match mode {
            Mode::Eval => (
                self.running_mean.value.data().to_vec(),
                self.running_var.value.data().to_vec(),
            ),
            Mode::Train => {
                let inv_count = T::lit(1.0 / count as f64);
                let mut means = vec![T::zero(); c];
                let mut vars = vec![T::zero(); c];
                for ch in 0..c {
                    let mut sum = T::zero();
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        sum += input.data()[off..off + plane].iter().copied().sum();
                    }
                    let mean = sum * inv_count;
                    let mut sq = T::zero();
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        sq += input.data()[off..off + plane]
                            .iter()
                            .map(|&x| (x - mean) * (x - mean))
                            .sum();
                    }
                    means[ch] = mean;
                    vars[ch] = sq * inv_count;
                }
                let m = T::lit(self.momentum);
                let unbias = if count > 1 {
                    T::lit(count as f64 / (count - 1) as f64)
                } else {
                    T::one()
                };
                for ch in 0..c {
                    let rm = &mut self.running_mean.value.data_mut()[ch];
                    *rm = (T::one() - m) * *rm + m * means[ch];
                    let rv = &mut self.running_var.value.data_mut()[ch];
                    *rv = (T::one() - m) * *rv + m * vars[ch] * unbias;
                }
                (means, vars)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut normalized = Tensor::zeros(input.shape());
        let mut out = Tensor::zeros(input.shape());
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let gamma = self.weight.value.data()[ch];
                let beta = self.bias.value.data()[ch];
                for i in off..off + plane {
                    let xhat = (input.data()[i] - mean[ch]) * inv_std[ch];
                    normalized.data_mut()[i] = xhat;
                    out.data_mut()[i] = gamma * xhat + beta;
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some(Cache {
                normalized,
                inv_std,
            });
        }
        out
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Tensor<T> {
        let Cache {
            normalized,
            inv_std,
        } = self.cache.take().expect("batch-norm backward without training forward");
        let (n, c, h, w) = grad_output.dims4();
        let plane = h * w;
        let count = T::lit((n * plane) as f64);
        let mut grad_input = Tensor::zeros(grad_output.shape());
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let dy = grad_output.data()[i];
                    sum_dy += dy;
                    sum_dy_xhat += dy * normalized.data()[i];
                }
            }
            self.weight.grad_mut()[ch] += sum_dy_xhat;
            self.bias.grad_mut()[ch] += sum_dy;
            let scale = self.weight.value.data()[ch] * inv_std[ch] / count;
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    grad_input.data_mut()[i] = scale
                        * (count * grad_output.data()[i] - sum_dy - normalized.data()[i] * sum_dy_xhat);
                }
            }
        }
        grad_input
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
