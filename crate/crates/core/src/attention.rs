//! Reference masked attention: `softmax(Q Kᵀ · scale + additive) V`.
//!
//! Masked entries receive [`NEG`] before the softmax, which underflows to an
//! exact zero weight whenever the unmasked scores are of ordinary magnitude.
//! A query row whose mask admits no key falls back to the unmasked softmax
//! for that row; such rows are reported in [`AttentionOutput::fallback_rows`].

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::maskgen::BinaryMatrix;

/// Additive value for masked-out entries.
pub const NEG: f64 = -1e9;

/// Score scaling applied to `Q Kᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `1 / sqrt(d_model)`.
    #[default]
    InvSqrtD,
    /// `1 / d_model`.
    InvD,
}

impl ScaleMode {
    pub fn scale(self, d_model: usize) -> f64 {
        let d = d_model as f64;
        match self {
            ScaleMode::InvSqrtD => 1.0 / d.sqrt(),
            ScaleMode::InvD => 1.0 / d,
        }
    }
}

/// Borrowed query/key/value matrices plus the score scale.
#[derive(Debug, Clone, Copy)]
pub struct AttentionInputs<'a> {
    q: ArrayView2<'a, f64>,
    k: ArrayView2<'a, f64>,
    v: ArrayView2<'a, f64>,
    scale: f64,
}

impl<'a> AttentionInputs<'a> {
    pub fn new(q: ArrayView2<'a, f64>, k: ArrayView2<'a, f64>, v: ArrayView2<'a, f64>, scale: f64) -> Result<Self> {
        if q.nrows() == 0 || k.nrows() == 0 {
            return Err(invalid("attention needs at least one query and one key"));
        }
        if q.ncols() != k.ncols() {
            return Err(Error::ShapeMismatch(format!("query width {} vs key width {}", q.ncols(), k.ncols())));
        }
        if k.nrows() != v.nrows() {
            return Err(Error::ShapeMismatch(format!("{} keys vs {} values", k.nrows(), v.nrows())));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid(format!("scale {scale} must be positive and finite")));
        }
        if !(q.iter().chain(k.iter()).chain(v.iter()).all(|x| x.is_finite())) {
            return Err(invalid("attention inputs must be finite"));
        }
        Ok(AttentionInputs { q, k, v, scale })
    }

    pub fn d_q(&self) -> usize {
        self.q.nrows()
    }

    pub fn d_k(&self) -> usize {
        self.k.nrows()
    }

    /// Scaled scores `Q Kᵀ · scale`, always in row-major layout.
    pub fn scores(&self) -> Array2<f64> {
        let s = self.q.dot(&self.k.t()) * self.scale;
        if s.is_standard_layout() {
            s
        } else {
            s.as_standard_layout().into_owned()
        }
    }
}

/// A mask in additive form: `0.0` where attention is allowed, [`NEG`] elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveMask {
    values: Array2<f64>,
}

impl AdditiveMask {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

pub fn to_additive(mask: &BinaryMatrix) -> AdditiveMask {
    let values = Array2::from_shape_fn(mask.shape(), |(i, j)| if mask.get(i, j) { 0.0 } else { NEG });
    AdditiveMask { values }
}

/// Convert a dense 0/1 matrix, rejecting anything else.
pub fn additive_from_dense(mask: &Array2<f64>) -> Result<AdditiveMask> {
    if let Some(bad) = mask.iter().find(|&&x| x != 0.0 && x != 1.0) {
        return Err(invalid(format!("mask entry {bad} is not binary")));
    }
    Ok(AdditiveMask { values: mask.mapv(|x| if x == 1.0 { 0.0 } else { NEG }) })
}

/// Output rows, the attention weights that produced them, and the query
/// rows that had to fall back to unmasked attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub output: Array2<f64>,
    pub weights: Array2<f64>,
    pub fallback_rows: Vec<usize>,
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

pub fn masked_attention(inp: &AttentionInputs<'_>, mask: &BinaryMatrix) -> Result<AttentionOutput> {
    if mask.shape() != (inp.d_q(), inp.d_k()) {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} for {} queries x {} keys",
            mask.shape(),
            inp.d_q(),
            inp.d_k()
        )));
    }
    let mut weights = inp.scores();
    let mut fallback_rows = Vec::new();
    for (i, mut row) in weights.axis_iter_mut(Axis(0)).enumerate() {
        let admitted = mask.row(i);
        if admitted.iter().any(|&b| b) {
            for (s, &ok) in row.iter_mut().zip(admitted) {
                if !ok {
                    *s += NEG;
                }
            }
        } else {
            fallback_rows.push(i);
        }
        softmax_in_place(row.as_slice_mut().expect("row-major scores"));
    }
    let output = weights.dot(&inp.v);
    Ok(AttentionOutput { output, weights, fallback_rows })
}

/// Attention mass each row places on entries that `mask` excludes.
pub fn masked_mass(weights: &Array2<f64>, mask: &BinaryMatrix) -> Vec<f64> {
    weights
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| row.iter().zip(mask.row(i)).filter(|(_, &ok)| !ok).fold(0.0, |acc, (w, _)| acc + w))
        .collect()
}

/// Largest masked mass over rows that admit at least one entry. Rows with
/// nothing admitted are fallback rows and carry no leakage meaning.
pub fn max_leakage(weights: &Array2<f64>, mask: &BinaryMatrix) -> f64 {
    masked_mass(weights, mask)
        .into_iter()
        .enumerate()
        .filter(|&(i, _)| mask.row(i).iter().any(|&b| b))
        .map(|(_, m)| m)
        .fold(0.0, f64::max)
}
