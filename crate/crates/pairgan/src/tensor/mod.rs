//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Design points:
//! - Row-major storage; a [`Tensor`] is an immutable value (ops build new ones).
//! - Element type is generic over [`Scalar`]. Production code uses `f32`
//!   (32-bit storage); the gradient-check suites instantiate the same kernels
//!   at `f64` so finite-difference tolerances are meaningful.
//! - Explicit reductions (sums, means, pooled averages, normalization
//!   statistics) always accumulate in `f64` regardless of the element type.
//! - No implicit broadcasting: binary ops require equal shapes. The only
//!   shape-bending primitives are explicit (`add_bias`, `broadcast_channels`,
//!   `concat`, `slice_axis1`, `reshape`).
//! - A [`tape::Tape`] records every op; `backward` walks it once in reverse
//!   and returns gradients for trainable leaves only.

pub mod conv;
pub mod gradcheck;
pub mod norm;
pub mod ops;
pub mod tape;

use std::sync::Arc;

pub use conv::area_downsample;
pub use gradcheck::{grad_check, GradCheckReport};
pub use norm::{sn_matrix_dims, spectral_sigma, BnLayout, BnMode, SnState, SN_NORM_FLOOR};
pub use tape::{BnResult, GradMap, Tape, Var};

/// Element type for tensor storage: `f32` in production, `f64` for the
/// finite-difference verification suites.
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Convert from f64, rounding to this type's precision.
    fn fr(v: f64) -> Self;
    /// Widen to f64 (exact for both supported types).
    fn fl(self) -> f64;
}

impl Scalar for f32 {
    #[inline(always)]
    fn fr(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn fl(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn fr(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn fl(self) -> f64 {
        self
    }
}

#[derive(thiserror::Error, Debug)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },
    #[error("i/o failure in {op}: {source}")]
    Io {
        op: &'static str,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn fmt_shape(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join("x"))
}

/// Immutable dense tensor, row-major. Cloning is cheap (shared storage).
#[derive(Clone, Debug)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
}

impl<S: Scalar> PartialEq for Tensor<S> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && *self.data == *other.data
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!(
                    "shape {} implies {} elements, got {}",
                    fmt_shape(shape),
                    numel,
                    data.len()
                ),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![S::zero(); numel]) }
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![v; numel]) }
    }

    /// 1-element tensor (shape `[1]`), the canonical scalar.
    pub fn scalar(v: S) -> Self {
        Tensor { shape: vec![1], data: Arc::new(vec![v]) }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(&mut f).collect();
        Tensor { shape: shape.to_vec(), data: Arc::new(data) }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| S::fr(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Linear (row-major) element access.
    pub fn get(&self, i: usize) -> S {
        self.data[i]
    }

    /// Multi-index element access, row-major.
    pub fn at(&self, idx: &[usize]) -> S {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut lin = 0;
        for (i, (&ix, &dim)) in idx.iter().zip(self.shape.iter()).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of bounds at axis {i} (dim {dim})");
            lin = lin * dim + ix;
        }
        self.data[lin]
    }

    pub fn is_finite_all(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map into a new tensor (same shape).
    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v.fl()).collect()
    }

    /// Reinterpret with a new shape (same element count).
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!(
                    "cannot view {} ({} elements) as {}",
                    fmt_shape(&self.shape),
                    self.numel(),
                    fmt_shape(shape)
                ),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::clone(&self.data) })
    }

    /// Widen/narrow to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| T::fr(v.fl())).collect()),
        }
    }

    /// Max absolute elementwise difference against another tensor.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff requires equal shapes");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a.fl() - b.fl()).abs())
            .fold(0.0, f64::max)
    }
}
