//! Weighted Tchebycheff scalarization with a running reference point.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TchebycheffState {
    weights: Vec<f64>,
    /// Running coordinatewise maximum; `None` until the first batch.
    reference: Option<Vec<f64>>,
}

impl TchebycheffState {
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config(format!("weights must be positive, got {weights:?}")));
        }
        Ok(Self {
            weights: weights.to_vec(),
            reference: None,
        })
    }

    pub fn with_reference(weights: &[f64], reference: &[f64]) -> Result<Self> {
        let mut s = Self::new(weights)?;
        if reference.len() != weights.len() {
            return Err(Error::Shape("reference point length".into()));
        }
        s.reference = Some(reference.to_vec());
        Ok(s)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn reference(&self) -> Option<&[f64]> {
        self.reference.as_deref()
    }
}

/// −max_m w_m (z_m − r_m).
pub fn tchebycheff_score(weights: &[f64], reference: &[f64], rewards_row: &[f64]) -> f64 {
    -weights
        .iter()
        .zip(reference)
        .zip(rewards_row)
        .map(|((w, z), r)| w * (z - r))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Raises z to the batch maxima, then scores every batch row with the updated z.
pub fn tchebycheff_step(state: &mut TchebycheffState, batch: &[&[f64]]) -> Result<Vec<f64>> {
    let m = state.weights.len();
    if batch.iter().any(|r| r.len() != m) {
        return Err(Error::Shape(format!("batch rows must have {m} objectives")));
    }
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let z = state
        .reference
        .get_or_insert_with(|| vec![f64::NEG_INFINITY; m]);
    for row in batch {
        for (zm, r) in z.iter_mut().zip(row.iter()) {
            *zm = zm.max(*r);
        }
    }
    let z = z.clone();
    Ok(batch
        .iter()
        .map(|row| tchebycheff_score(&state.weights, &z, row))
        .collect())
}
