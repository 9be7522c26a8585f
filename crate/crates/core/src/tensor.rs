//! Dense row-major tensors.
//!
//! `TensorBase` is the value type carried through the whole crate: images,
//! model weights, gradients and attack state are all tensors. Values are
//! immutable once constructed; every operation returns a new tensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense multi-dimensional array with row-major layout.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBase<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> TensorBase<F> {
    /// Build a tensor from externally supplied data.
    ///
    /// Rejects shape/data length disagreement and non-finite values; data
    /// originating inside the crate goes through [`TensorBase::from_raw`]
    /// instead, because intermediate computations are allowed to produce
    /// non-finite values (callers detect those via [`TensorBase::all_finite`]).
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "tensor shape {shape:?} has a zero extent"
            )));
        }
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(
                "tensor constructed from external data contains NaN/Inf".into(),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor; the caller guarantees `product(shape) == data.len()`.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<F>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![F::zero(); numel])
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        let numel = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![value; numel])
    }

    /// 0-dimensional tensor holding one value.
    pub fn scalar(value: F) -> Self {
        Self::from_raw(vec![], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Value of a 0-dimensional tensor.
    pub fn item(&self) -> F {
        debug_assert!(self.data.len() == 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} ({} elements) into {:?} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                numel
            )));
        }
        Ok(Self::from_raw(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self::from_raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "elementwise op on mismatched shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_raw(self.shape.clone(), data))
    }

    pub fn ew_add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn ew_sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn ew_mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scaled(&self, c: F) -> Self {
        self.map(|v| v * c)
    }

    pub fn clamped(&self, lo: F, hi: F) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    pub fn sum(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &v| acc + v)
    }

    pub fn dot(&self, other: &Self) -> Result<F> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "dot on mismatched shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .fold(F::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn sum_squares(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &v| acc + v * v)
    }

    pub fn frobenius_norm(&self) -> F {
        self.sum_squares().sqrt()
    }

    /// Largest absolute entry, 0 for empty.
    pub fn max_abs(&self) -> F {
        self.data
            .iter()
            .fold(F::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub(crate) fn into_data(self) -> Vec<F> {
        self.data
    }

    #[inline]
    pub(crate) fn at2(&self, i: usize, j: usize) -> F {
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub(crate) fn at4(&self, b: usize, c: usize, i: usize, j: usize) -> F {
        let (sc, sh, sw) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((b * sc + c) * sh + i) * sw + j]
    }
}

impl<F: Scalar> std::fmt::Debug for TensorBase<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.data.len() <= 8 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(
                f,
                "Tensor{:?} [{:?}, {:?}, .. ({} elements)]",
                self.shape,
                self.data[0],
                self.data[1],
                self.data.len()
            )
        }
    }
}

/// Concatenate the elements of several tensors into one flat vector.
pub fn flatten_all<F: Scalar>(tensors: &[TensorBase<F>]) -> Vec<F> {
    let mut out = Vec::with_capacity(tensors.iter().map(|t| t.len()).sum());
    for t in tensors {
        out.extend_from_slice(t.data());
    }
    out
}

/// Frobenius norm of a list of tensors viewed as one concatenated vector.
pub fn frobenius_norm_all_tensors<F: Scalar>(tensors: &[TensorBase<F>]) -> F {
    tensors
        .iter()
        .fold(F::zero(), |acc, t| acc + t.sum_squares())
        .sqrt()
}
