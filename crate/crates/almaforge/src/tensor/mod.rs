//! Dense 2-D tensors and the reverse-mode tape.
//!
//! Everything in the training path is built from rank-2 tensors: vectors are
//! `[1, n]` rows, scalars are `[1, 1]`. The element type is generic so the
//! whole engine runs in `f32` (training default) or `f64` (gradient checks).
//!
//! Determinism contract: every kernel reduces in a fixed order that does not
//! depend on thread count. Parallel kernels split work by output row only, so
//! each output element is produced by exactly one serial loop.

mod kernels;
mod mask;
#[cfg(test)]
mod op_tests;
mod tape;

pub mod gradcheck;

pub use kernels::{matmul_nn, matmul_nn_seq, matmul_nt, matmul_tn};
pub use mask::AttentionMask;
pub use tape::{CeStats, Gradients, NodeId, Tape};
pub(crate) use tape::{gelu_scalar, row_moments};

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Scalar element of a tensor. Implemented for `f32` and `f64`.
pub trait Element:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln(self) -> Self {
        f32::ln(self)
    }
    fn tanh(self) -> Self {
        f32::tanh(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Shape or domain violation raised by an engine operation.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, left is [{lhs_rows}, {lhs_cols}], right is [{rhs_rows}, {rhs_cols}]")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("backward was already called on this tape; record a fresh tape first")]
    BackwardSpent,
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::Invalid {
                op: "tensor.new",
                detail: format!(
                    "data length {} does not fill shape [{rows}, {cols}]",
                    data.len()
                ),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::ZERO; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Gaussian init with mean 0 and the given standard deviation. Values are
    /// drawn in f64 and narrowed so `f32` and `f64` models share a stream.
    pub fn randn<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0f64, std).expect("std must be finite and non-negative");
        let data = (0..rows * cols)
            .map(|_| T::from_f64(normal.sample(rng)))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn get(&self, i: usize, j: usize) -> T {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transposed(&self) -> Tensor<T> {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lossy dtype conversion through f64.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Eager `a · b` outside the tape, for weight folding and tests.
pub fn product<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(
        a.cols, b.rows,
        "product: [{}, {}] · [{}, {}]",
        a.rows, a.cols, b.rows, b.cols
    );
    let mut out = Tensor::zeros(a.rows, b.cols);
    matmul_nn(&a.data, &b.data, &mut out.data, a.rows, a.cols, b.cols);
    out
}

impl Tensor<f32> {
    /// Bitwise equality, used by checkpoint round-trip tests.
    pub fn bits_eq(&self, other: &Tensor<f32>) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
