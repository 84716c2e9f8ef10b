//! Dense row-major tensors, a deterministic RNG, and a small reverse-mode
//! differentiation engine.
//!
//! [`Tensor`] is a plain value: a shape, a flat `f64` buffer and an optional
//! gradient accumulator. Differentiable computation happens on a [`Tape`],
//! which records every operation applied to [`Var`] handles and can replay
//! them backwards.

mod autograd;
pub mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod rng;
pub mod wfdt;

pub use autograd::{Grads, Tape, Var};
pub use gradcheck::{grad_check, GradCheckReport};
pub use rng::Rng;

use crate::error::{Error, Result};

/// N-dimensional real-valued array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Gradient accumulator, same length as `data` when present.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from external data, rejecting non-finite values.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self::from_raw(shape.to_vec(), data))
    }

    /// Internal constructor; callers guarantee the invariants.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![value; numel])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_raw(vec![], vec![value])
    }

    /// `n`×`n` identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Fills a tensor by evaluating `f` on each flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_raw(shape.to_vec(), (0..numel).map(f).collect())
    }

    /// Standard normal samples.
    pub fn randn(shape: &[usize], rng: &mut Rng) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_raw(shape.to_vec(), rng.normal_vec(numel))
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        Self::from_fn(shape, |_| rng.uniform(lo, hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::dim(
                "item",
                format!("tensor of shape {:?} is not a scalar", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    /// Same data under a new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::mismatch("reshape", &self.shape, shape));
        }
        Ok(Self::from_raw(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::mismatch(op, &self.shape, &other.shape));
        }
        Ok(Self::from_raw(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::mismatch("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Slice `[start, start+len)` of the leading axis.
    pub fn narrow0(&self, start: usize, len: usize) -> Result<Self> {
        let lead = *self.shape.first().ok_or_else(|| Error::dim("narrow", "scalar tensor"))?;
        if start + len > lead || len == 0 {
            return Err(Error::dim(
                "narrow",
                format!("range {start}..{} out of 0..{lead}", start + len),
            ));
        }
        let inner = self.numel() / lead;
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self::from_raw(
            shape,
            self.data[start * inner..(start + len) * inner].to_vec(),
        ))
    }

    /// Concatenates tensors along the leading axis.
    pub fn cat0(parts: &[&Tensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::dim("cat", "no inputs"))?;
        if first.ndim() == 0 {
            return Err(Error::dim("cat", "scalar tensor"));
        }
        let tail = &first.shape[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.ndim() == 0 || &p.shape[1..] != tail {
                return Err(Error::mismatch("cat", &first.shape, &p.shape));
            }
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = lead;
        Ok(Self::from_raw(shape, data))
    }

    /// Index of a `[C, H, W]` element.
    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    /// Checks every value is finite; used on data arriving from files.
    pub fn validate_finite(&self) -> Result<()> {
        match self.data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            Some((index, &value)) => Err(Error::NonFinite { index, value }),
            None => Ok(()),
        }
    }

    /// Extents `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::dim(
                "chw",
                format!("expected [C, H, W], got {:?}", self.shape),
            )),
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::dim("tensor", format!("zero extent in {shape:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_lengths() {
        assert!(matches!(
            Tensor::new(&[2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(Tensor::new(&[2], vec![1.0, f64::INFINITY]).is_err());
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[0, 2], vec![]).is_err());
    }

    #[test]
    fn narrow_and_cat_are_inverse() {
        let t = Tensor::from_fn(&[4, 2, 3], |i| i as f64);
        let a = t.narrow0(0, 1).unwrap();
        let b = t.narrow0(1, 3).unwrap();
        assert_eq!(Tensor::cat0(&[&a, &b]).unwrap(), t);
        assert!(t.narrow0(3, 2).is_err());
    }
}
