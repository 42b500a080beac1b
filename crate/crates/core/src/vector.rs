//! Model-parameter vectors and the small amount of slice arithmetic the
//! simulator needs. Everything is plain `f64` with fixed evaluation order
//! so runs reproduce bitwise.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A d-dimensional parameter vector. The same representation carries the
/// global model, local iterates, model differences, memories, and transmit
/// signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector {
    pub values: Vec<f64>,
}

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        ModelVector {
            values: vec![0.0; dim],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ModelVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.values)
    }

    /// Error unless every entry is finite. `context` names the producing
    /// operation in the message.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        for (j, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "{context}: non-finite entry {v} at coordinate {j}"
                )));
            }
        }
        Ok(())
    }

    pub fn check_len(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: self.len(),
            });
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// a += s * b
pub fn axpy(a: &mut [f64], s: f64, b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensure_finite_names_coordinate() {
        let v = ModelVector::from_vec(vec![1.0, f64::NAN, 2.0]);
        let err = v.ensure_finite("unit test").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("coordinate 1"), "{msg}");
    }

    #[test]
    fn axpy_matches_manual() {
        let mut a = vec![1.0, 2.0];
        axpy(&mut a, 0.5, &[4.0, -2.0]);
        assert_eq!(a, vec![3.0, 1.0]);
    }
}
