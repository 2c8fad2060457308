//! Flat parameter vectors, the unit exchanged by every learning step.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// A flat vector of learnable parameters. Dimension is fixed by the task
/// and identical across all actors in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModelParams<S: Scalar> {
    values: Vec<S>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![S::zero(); dim],
        }
    }

    pub fn from_values(values: Vec<S>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Largest absolute coordinate; zero for the empty vector.
    pub fn linf_norm(&self) -> S {
        self.values
            .iter()
            .fold(S::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }

    /// `self += scale * other`. Dimensions must match.
    pub fn scaled_add(&mut self, scale: S, other: &Self) -> Result<()> {
        other.check_dim(self.dim())?;
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a = *a + scale * *b;
        }
        Ok(())
    }

    /// Append the canonical byte encoding of every coordinate to `out`.
    pub fn write_canonical(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            v.write_canonical(out);
        }
    }
}
