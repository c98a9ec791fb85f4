use rand::Rng;

use super::{join, Mode, Module, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Square-kernel 2-D convolution over NCHW batches, lowered to im2col + GEMM.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    stride: usize,
    padding: usize,
    /// Skip the input gradient when nothing upstream needs it (first layer).
    pub(crate) skip_input_grad: bool,
    input: Option<Tensor<T>>,
}

/// How the weight tensor of a fresh convolution is drawn.
#[derive(Clone, Copy, Debug)]
pub enum ConvInit {
    /// He-normal scaled by output fan (`out · k · k`), as ResNets use.
    KaimingFanOut,
    /// He-normal scaled by input fan (`in · k · k`).
    KaimingFanIn,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: ConvInit,
        rng: &mut R,
    ) -> Self {
        let fan = match init {
            ConvInit::KaimingFanOut => out_channels * kernel * kernel,
            ConvInit::KaimingFanIn => in_channels * kernel * kernel,
        };
        let std = (2.0 / fan as f64).sqrt();
        let weight = Tensor::randn(&[out_channels, in_channels, kernel, kernel], std, rng);
        Self {
            weight: Param::new(weight),
            bias: bias.then(|| Param::new(Tensor::zeros(&[out_channels]))),
            stride,
            padding,
            skip_input_grad: false,
            input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn output_side(&self, side: usize) -> usize {
        (side + 2 * self.padding).saturating_sub(self.kernel()) / self.stride + 1
    }

    /// Swaps in a new weight with the same filter count and kernel size; the
    /// input channel count follows the new tensor.
    pub fn replace_weight(&mut self, weight: Tensor<T>) -> Result<()> {
        let old = self.weight.value.shape();
        let new = weight.shape();
        if new.len() != 4 || new[0] != old[0] || new[2] != old[2] || new[3] != old[3] {
            return Err(Error::Shape(format!(
                "conv weight {new:?} incompatible with existing {old:?}"
            )));
        }
        self.weight.set_value(weight);
        Ok(())
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == 1 && self.stride == 1 && self.padding == 0
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    channels: usize,
    (h, w): (usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
    cols: &mut [T],
) {
    let plane = oh * ow;
    for c in 0..channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(
    cols: &[T],
    channels: usize,
    (h, w): (usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
    x: &mut [T],
) {
    let plane = oh * ow;
    for c in 0..channels {
        let dst = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let (n, c, h, w) = input.dims4();
        assert_eq!(c, self.in_channels(), "conv input channels");
        let (k, out_c) = (self.kernel(), self.out_channels());
        let (oh, ow) = (self.output_side(h), self.output_side(w));
        let patch = c * k * k;
        let mut out = Tensor::zeros(&[n, out_c, oh, ow]);
        let mut cols = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); patch * oh * ow]
        };
        for b in 0..n {
            let x = &input.data()[b * c * h * w..(b + 1) * c * h * w];
            let lowered: &[T] = if self.is_pointwise() {
                x
            } else {
                im2col(x, c, (h, w), k, self.stride, self.padding, (oh, ow), &mut cols);
                &cols
            };
            let y = &mut out.data_mut()[b * out_c * oh * ow..(b + 1) * out_c * oh * ow];
            T::gemm(
                false,
                false,
                out_c,
                oh * ow,
                patch,
                T::one(),
                self.weight.value.data(),
                lowered,
                T::zero(),
                y,
            );
            if let Some(bias) = &self.bias {
                for (plane, &bv) in y.chunks_mut(oh * ow).zip(bias.value.data()) {
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        if mode == Mode::Train {
            self.input = Some(input.clone());
        }
        out
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Tensor<T> {
        let input = self.input.take().expect("conv backward without training forward");
        let (n, c, h, w) = input.dims4();
        let (_, out_c, oh, ow) = grad_output.dims4();
        let k = self.kernel();
        let patch = c * k * k;
        let pointwise = self.is_pointwise();
        let mut cols = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); patch * oh * ow]
        };
        let mut grad_cols = if pointwise || self.skip_input_grad {
            Vec::new()
        } else {
            vec![T::zero(); patch * oh * ow]
        };
        let mut grad_input = if self.skip_input_grad {
            Tensor::zeros(&[0])
        } else {
            Tensor::zeros(&[n, c, h, w])
        };
        for b in 0..n {
            let x = &input.data()[b * c * h * w..(b + 1) * c * h * w];
            let dy = &grad_output.data()[b * out_c * oh * ow..(b + 1) * out_c * oh * ow];
            let lowered: &[T] = if pointwise {
                x
            } else {
                im2col(x, c, (h, w), k, self.stride, self.padding, (oh, ow), &mut cols);
                &cols
            };
            T::gemm(
                false,
                true,
                out_c,
                patch,
                oh * ow,
                T::one(),
                dy,
                lowered,
                T::one(),
                self.weight.grad_mut(),
            );
            if let Some(bias) = &mut self.bias {
                for (g, plane) in bias.grad_mut().iter_mut().zip(dy.chunks(oh * ow)) {
                    *g += plane.iter().copied().sum();
                }
            }
            if self.skip_input_grad {
                continue;
            }
            let dx = &mut grad_input.data_mut()[b * c * h * w..(b + 1) * c * h * w];
            if pointwise {
                T::gemm(
                    true,
                    false,
                    patch,
                    oh * ow,
                    out_c,
                    T::one(),
                    self.weight.value.data(),
                    dy,
                    T::zero(),
                    dx,
                );
            } else {
                T::gemm(
                    true,
                    false,
                    patch,
                    oh * ow,
                    out_c,
                    T::one(),
                    self.weight.value.data(),
                    dy,
                    T::zero(),
                    &mut grad_cols,
                );
                col2im_add(&grad_cols, c, (h, w), k, self.stride, self.padding, (oh, ow), dx);
            }
        }
        grad_input
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(bias) = &self.bias {
            f(&join(prefix, "bias"), bias);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(bias) = &mut self.bias {
            f(&join(prefix, "bias"), bias);
        }
    }
}
