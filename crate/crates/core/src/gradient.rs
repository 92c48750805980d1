//! Flat 64-bit gradient vectors over all trainable parameters.

use crate::error::{Error, Result};

/// A flat sequence of 64-bit floats over all trainable parameters.
///
/// The same representation carries per-reward gradients, their unit-normalized
/// versions, and the harmonized update directions.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "gradient lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|x| x * factor).collect())
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for x in &mut self.0 {
            *x *= factor;
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Self, factor: f64) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "gradient lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Cosine of the angle between two vectors, clamped into [-1, 1];
    /// 0.0 when either is zero.
    pub fn cosine(&self, other: &Self) -> Result<f64> {
        let dot = self.dot(other)?;
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return Ok(0.0);
        }
        Ok((dot / denom).clamp(-1.0, 1.0))
    }

    /// Elementwise division by a scalar.
    pub fn divided_by(&self, divisor: f64) -> Self {
        Self(self.0.iter().map(|x| x / divisor).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Sum of `weights[k] * vectors[k]`, reduced in index order.
    pub fn linear_combination(vectors: &[Self], weights: &[f64]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::EmptyInput("linear_combination of no vectors".into()));
        }
        if vectors.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} vectors vs {} weights",
                vectors.len(),
                weights.len()
            )));
        }
        let mut out = Self::zeros(vectors[0].len());
        for (v, &w) in vectors.iter().zip(weights) {
            out.add_scaled(v, w)?;
        }
        Ok(out)
    }

    /// Largest absolute elementwise difference; errors on length mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "gradient lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl From<Vec<f64>> for GradientVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}
