//! Dense row-major tensors.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Image batches use `(batch, channels, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Standard normal draws scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * std)
            })
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Uniform draws on `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Splits a rank-4 shape into `(n, c, h, w)`.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected NCHW tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    /// Splits a rank-2 shape into `(rows, cols)`.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected matrix, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Row `i` of a matrix.
    pub fn row(&self, i: usize) -> &[T] {
        let (_, cols) = self.dims2();
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(parts: &[&Tensor<T>]) -> Self {
        let rows = parts[0].dims2().0;
        let widths: Vec<usize> = parts.iter().map(|p| p.dims2().1).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                assert_eq!(p.dims2().0, rows, "concat_cols row mismatch");
                data.extend_from_slice(p.row(r));
            }
        }
        Self {
            shape: vec![rows, total],
            data,
        }
    }

    /// Inverse of [`Tensor::concat_cols`].
    pub fn split_cols(&self, widths: &[usize]) -> Vec<Self> {
        let (rows, cols) = self.dims2();
        assert_eq!(widths.iter().sum::<usize>(), cols, "split widths must cover all columns");
        let mut out: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
        for r in 0..rows {
            let mut start = 0;
            let row = self.row(r);
            for (dst, &w) in out.iter_mut().zip(widths) {
                dst.extend_from_slice(&row[start..start + w]);
                start += w;
            }
        }
        out.into_iter()
            .zip(widths)
            .map(|(data, &w)| Self {
                shape: vec![rows, w],
                data,
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.to_f64_lossy())).collect(),
        }
    }
}

/// Row-wise softmax of a matrix, computed with the max-shift for stability.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = logits.dims2();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor {
        shape: vec![rows, cols],
        data: out,
    }
}

/// Backward pass of a row-wise softmax given its output `probs`.
pub fn softmax_rows_backward<T: Scalar>(probs: &Tensor<T>, grad_probs: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = probs.dims2();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let p = probs.row(r);
        let g = grad_probs.row(r);
        let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        out.extend(p.iter().zip(g).map(|(&pi, &gi)| pi * (gi - dot)));
    }
    Tensor {
        shape: vec![rows, cols],
        data: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 1], vec![5.0, 6.0]).unwrap();
        let joined = Tensor::concat_cols(&[&a, &b]);
        assert_eq!(joined.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let parts = joined.split_cols(&[2, 1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let t = Tensor::<f64>::full(&[3, 4], 7.5);
        let p = softmax_rows(&t);
        assert!(p.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }
}
