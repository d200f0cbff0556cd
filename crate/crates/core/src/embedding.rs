//! Vector primitives: normalization, cosine similarity and weighted-sum fusion.
//!
//! Values are stored as `f32`; every reduction (norms, dot products, fusion
//! sums) accumulates in `f64` and rounds once on the way out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vectors whose norm is within this distance of 1 are treated as unit vectors.
pub const UNIT_TOLERANCE: f64 = 1e-6;

const ZERO_NORM: f64 = 1e-12;

/// A fixed-dimension embedding with a unit-norm flag.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Wraps raw values. The `normalized` flag is derived from the actual norm.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let normalized = (norm(&values) - 1.0).abs() <= UNIT_TOLERANCE;
        Ok(Self { values, normalized })
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    /// Returns the unit vector pointing the same way.
    ///
    /// Vectors already within [`UNIT_TOLERANCE`] of unit length are returned
    /// unchanged, so normalization is idempotent bit-for-bit.
    pub fn l2_normalize(&self) -> Result<EmbeddingVector> {
        l2_normalize_f32(&self.values)
    }
}

fn norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| {
            let v = v as f64;
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Dot product with `f64` accumulation.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

fn l2_normalize_f32(values: &[f32]) -> Result<EmbeddingVector> {
    let n = norm(values);
    if n <= ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    if (n - 1.0).abs() <= UNIT_TOLERANCE {
        return Ok(EmbeddingVector {
            values: values.to_vec(),
            normalized: true,
        });
    }
    let values = values.iter().map(|&v| (v as f64 / n) as f32).collect();
    Ok(EmbeddingVector {
        values,
        normalized: true,
    })
}

/// Normalizes an `f64` accumulator, rounding to storage precision once.
pub(crate) fn normalize_f64(values: &[f64]) -> Result<EmbeddingVector> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n <= ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    if (n - 1.0).abs() <= UNIT_TOLERANCE {
        return EmbeddingVector::from_f64(values);
    }
    let values: Vec<f32> = values.iter().map(|&v| (v / n) as f32).collect();
    Ok(EmbeddingVector {
        values,
        normalized: true,
    })
}

pub fn l2_normalize(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    v.l2_normalize()
}

/// Cosine similarity in `[-1, 1]`. Unit vectors short-circuit to a plain dot product.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.normalized && b.normalized {
        return Ok(clamp_unit(dot(&a.values, &b.values)));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na <= ZERO_NORM || nb <= ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(clamp_unit(dot(&a.values, &b.values) / (na * nb)))
}

#[inline]
pub(crate) fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Complementary image/text weights for weighted-sum fusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    w_img: f64,
    w_text: f64,
}

impl FusionWeights {
    /// Query-side fusion weights used for both retrieval tasks.
    pub const QUERY_DEFAULT: FusionWeights = FusionWeights {
        w_img: 0.7,
        w_text: 0.3,
    };
    /// Index-side weights for bi-directional fusion.
    pub const INDEX_DEFAULT: FusionWeights = FusionWeights {
        w_img: 0.3,
        w_text: 0.7,
    };
    /// Near-image-only weights for indexes whose captions are noisy.
    pub const NOISY_INDEX: FusionWeights = FusionWeights {
        w_img: 0.95,
        w_text: 0.05,
    };
    /// Pure image embedding; fusion degenerates to the baseline.
    pub const IMAGE_ONLY: FusionWeights = FusionWeights {
        w_img: 1.0,
        w_text: 0.0,
    };
    pub const TEXT_ONLY: FusionWeights = FusionWeights {
        w_img: 0.0,
        w_text: 1.0,
    };

    pub fn new(w_img: f64, w_text: f64) -> Result<Self> {
        let in_range = |w: f64| (0.0..=1.0).contains(&w);
        if !in_range(w_img) || !in_range(w_text) || (w_img + w_text - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights { w_img, w_text });
        }
        Ok(Self { w_img, w_text })
    }

    /// Builds `(1 - w_text, w_text)`.
    pub fn from_text_weight(w_text: f64) -> Result<Self> {
        Self::new(1.0 - w_text, w_text)
    }

    pub fn w_img(&self) -> f64 {
        self.w_img
    }

    pub fn w_text(&self) -> f64 {
        self.w_text
    }
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self::QUERY_DEFAULT
    }
}

/// `w_img * e_img + w_text * e_text`, optionally renormalized.
///
/// Both inputs are expected to be unit vectors.
pub fn fuse(
    e_img: &EmbeddingVector,
    e_text: &EmbeddingVector,
    w: FusionWeights,
    renormalize: bool,
) -> Result<EmbeddingVector> {
    if e_img.dim() != e_text.dim() {
        return Err(Error::DimensionMismatch {
            expected: e_img.dim(),
            actual: e_text.dim(),
        });
    }
    debug_assert!(e_img.normalized && e_text.normalized);
    let sum: Vec<f64> = e_img
        .values
        .iter()
        .zip(&e_text.values)
        .map(|(&a, &b)| w.w_img * a as f64 + w.w_text * b as f64)
        .collect();
    if renormalize {
        normalize_f64(&sum)
    } else {
        if sum.iter().map(|v| v * v).sum::<f64>().sqrt() <= ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        EmbeddingVector::from_f64(&sum)
    }
}
