//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is plain row-major storage (parameters, inputs, frozen
//! outputs). Differentiable computation happens on a [`Tape`]: values are
//! registered as leaves, every operation records its inputs and a backward
//! rule, and [`Tape::backward`] replays the recording in reverse to
//! accumulate gradients.

mod adam;
mod tape;
#[cfg(test)]
mod tests;

pub use adam::{AdamConfig, AdamState};
pub use tape::{CrossEntropyOut, Tape, Var};

use crate::scalar::Scalar;
use rand::Rng;

/// Errors from tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} requires a non-empty input")]
    EmptyInput { op: &'static str },
    #[error("data length {got} does not match shape volume {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("token id {id} is out of vocabulary range {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
}

/// Dense row-major array of scalars, optionally carrying a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let volume: usize = shape.iter().product();
        if volume != data.len() {
            return Err(TensorError::DataLength { expected: volume, got: data.len() });
        }
        if cfg!(debug_assertions) && !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "from_vec" });
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let volume = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); volume], requires_grad: false, grad: None }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    /// 2-D tensor from rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, TensorError> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(TensorError::ShapeMismatch {
                op: "from_rows",
                detail: "ragged rows".into(),
            });
        }
        Self::from_vec(vec![n, m], rows.concat())
    }

    /// Samples uniform(-bound, bound). Draws in f64 so the stream of random
    /// numbers is identical for every precision.
    pub fn uniform<R: Rng>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let volume: usize = shape.iter().product();
        let data = (0..volume)
            .map(|_| T::from_f64(rng.random_range(-bound..bound)))
            .collect();
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    /// Standard fan-in init: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn fan_in_init<R: Rng>(fan_in: usize, shape: Vec<usize>, rng: &mut R) -> Self {
        let mut t = Self::uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng);
        t.requires_grad = true;
        t
    }

    /// Zero-initialized trainable tensor (biases, positional table).
    pub fn trainable_zeros(shape: Vec<usize>) -> Self {
        let mut t = Self::zeros(shape);
        t.requires_grad = true;
        t
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count for 2-D tensors.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count for 2-D tensors.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        let m = self.cols();
        &self.data[row * m..(row + 1) * m]
    }

    /// Converts element-wise; used when moving checkpoints across precisions
    /// is explicitly requested (never implicit).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}
