//! Dense complex tensors with labeled indices.
//!
//! Data is stored row-major over the index list, with each element an
//! interleaved `(re, im)` pair. Precision is a type parameter: `f32` for
//! single and `f64` for double.

mod contract;
mod permute;
mod split;

pub use contract::{contract_pair, pair_permutation_plans, ContractionShape};
pub use permute::{classify_permutation, permute, CaseClass, PermutationPlan};
pub use split::{accumulation_chain_length, split_common_contract};

use std::collections::HashSet;
use std::fmt::Debug;
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TncError};

/// Floating-point precision of tensor elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    /// Bytes per complex element.
    pub const fn element_bytes(self) -> usize {
        match self {
            Precision::Single => 8,
            Precision::Double => 16,
        }
    }

    pub const fn tag(self) -> u8 {
        match self {
            Precision::Single => 0,
            Precision::Double => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Precision::Single),
            1 => Ok(Precision::Double),
            t => Err(TncError::Format(format!("unknown precision tag {t}"))),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = TncError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(TncError::InvalidParameter(format!(
                "unknown precision `{other}`"
            ))),
        }
    }
}

/// Real scalar backing a complex tensor element.
pub trait Real: Float + Sum + Debug + Default + Send + Sync + 'static {
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Flips one bit of the IEEE representation. Used for fault injection.
    fn flip_bit(self, bit: u32) -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn flip_bit(self, bit: u32) -> Self {
        f32::from_bits(self.to_bits() ^ (1u32 << (bit % 32)))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn flip_bit(self, bit: u32) -> Self {
        f64::from_bits(self.to_bits() ^ (1u64 << (bit % 64)))
    }
}

/// Converts a complex value between precisions.
pub fn cast_complex<T: Real, U: Real>(c: Complex<T>) -> Complex<U> {
    Complex::new(U::from_f64(c.re.as_f64()), U::from_f64(c.im.as_f64()))
}

/// A labeled tensor leg.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Index {
    pub label: String,
    pub dim: usize,
}

impl Index {
    pub fn new(label: impl Into<String>, dim: usize) -> Self {
        Index {
            label: label.into(),
            dim,
        }
    }

    /// A dimension-2 index, the qubit-circuit default.
    pub fn qubit(label: impl Into<String>) -> Self {
        Index::new(label, 2)
    }
}

/// Product of the dimensions of `indices` (1 for an empty list).
pub fn volume(indices: &[Index]) -> usize {
    indices.iter().map(|i| i.dim).product()
}

pub(crate) fn validate_indices(indices: &[Index]) -> Result<()> {
    let mut seen = HashSet::with_capacity(indices.len());
    for ix in indices {
        if ix.dim == 0 {
            return Err(TncError::InvalidIndex(format!(
                "index `{}` has dimension 0",
                ix.label
            )));
        }
        if !seen.insert(ix.label.as_str()) {
            return Err(TncError::InvalidIndex(format!(
                "label `{}` appears twice in one tensor",
                ix.label
            )));
        }
    }
    Ok(())
}

/// Row-major strides for `indices`.
pub fn row_major_strides(indices: &[Index]) -> Vec<usize> {
    let mut strides = vec![1; indices.len()];
    for k in (0..indices.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * indices[k + 1].dim;
    }
    strides
}

/// Dense complex tensor: ordered indices plus row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T: Real> {
    indices: Vec<Index>,
    data: Vec<Complex<T>>,
}

impl<T: Real> DenseTensor<T> {
    pub fn new(indices: Vec<Index>, data: Vec<Complex<T>>) -> Result<Self> {
        validate_indices(&indices)?;
        let expected = volume(&indices);
        if data.len() != expected {
            return Err(TncError::ShapeMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(DenseTensor { indices, data })
    }

    pub(crate) fn from_parts_unchecked(indices: Vec<Index>, data: Vec<Complex<T>>) -> Self {
        debug_assert_eq!(volume(&indices), data.len());
        DenseTensor { indices, data }
    }

    pub fn zeros(indices: Vec<Index>) -> Result<Self> {
        let n = volume(&indices);
        Self::new(indices, vec![Complex::zero(); n])
    }

    pub fn scalar(value: Complex<T>) -> Self {
        DenseTensor {
            indices: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` on every multi-index in row-major order.
    pub fn from_fn(indices: Vec<Index>, mut f: impl FnMut(&[usize]) -> Complex<T>) -> Result<Self> {
        validate_indices(&indices)?;
        let n = volume(&indices);
        let mut data = Vec::with_capacity(n);
        let mut multi = vec![0usize; indices.len()];
        for _ in 0..n {
            data.push(f(&multi));
            for k in (0..indices.len()).rev() {
                multi[k] += 1;
                if multi[k] < indices[k].dim {
                    break;
                }
                multi[k] = 0;
            }
        }
        Ok(DenseTensor { indices, data })
    }

    pub fn indices(&self) -> &[Index] {
        &self.indices
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex<T>> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn byte_size(&self) -> usize {
        self.data.len() * T::PRECISION.element_bytes()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.indices.iter().map(|i| i.label.as_str())
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.indices.iter().position(|i| i.label == label)
    }

    /// Element at a multi-index given in the tensor's own index order.
    pub fn get(&self, multi: &[usize]) -> Complex<T> {
        let strides = row_major_strides(&self.indices);
        let off: usize = multi.iter().zip(&strides).map(|(m, s)| m * s).sum();
        self.data[off]
    }

    /// Value of a rank-0 tensor.
    pub fn scalar_value(&self) -> Option<Complex<T>> {
        (self.indices.is_empty()).then(|| self.data[0])
    }

    pub fn scale(&self, alpha: Complex<T>) -> Self {
        DenseTensor {
            indices: self.indices.clone(),
            data: self.data.iter().map(|&x| x * alpha).collect(),
        }
    }

    /// Adds `other` elementwise. Both tensors must have identical index lists.
    pub fn add_assign(&mut self, other: &DenseTensor<T>) -> Result<()> {
        if self.indices != other.indices {
            return Err(TncError::InvalidIndex(
                "cannot add tensors with different index lists".into(),
            ));
        }
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x = *x + *y;
        }
        Ok(())
    }

    /// Fixes `label` to `value`, keeping the index with dimension 1.
    ///
    /// Keeping the leg lets projected networks share the structure (and the
    /// cost accounting) of the sliced contraction tree.
    pub fn project(&self, label: &str, value: usize) -> Result<Self> {
        let pos = self
            .position(label)
            .ok_or_else(|| TncError::UnknownLabel(label.to_string()))?;
        let dim = self.indices[pos].dim;
        if value >= dim {
            return Err(TncError::InvalidParameter(format!(
                "projection value {value} out of range for `{label}` (dim {dim})"
            )));
        }
        let inner: usize = self.indices[pos + 1..].iter().map(|i| i.dim).product();
        let outer: usize = self.indices[..pos].iter().map(|i| i.dim).product();
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = o * dim * inner + value * inner;
            data.extend_from_slice(&self.data[base..base + inner]);
        }
        let mut indices = self.indices.clone();
        indices[pos].dim = 1;
        Ok(DenseTensor { indices, data })
    }

    /// Converts element precision.
    pub fn cast<U: Real>(&self) -> DenseTensor<U> {
        DenseTensor {
            indices: self.indices.clone(),
            data: self.data.iter().map(|&c| cast_complex(c)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &DenseTensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (*x - *y).norm().as_f64())
            .fold(0.0, f64::max)
    }
}
