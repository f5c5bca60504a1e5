//! GradNorm weight balancing over per-objective gradients.

use crate::calculus::norm;
use crate::error::{Error, Result};

const LOSS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradNormState {
    weights: Vec<f64>,
    reference_losses: Option<Vec<f64>>,
    pub alpha: f64,
    pub weight_lr: f64,
}

impl GradNormState {
    pub fn new(num_objectives: usize, alpha: f64, weight_lr: f64) -> Result<Self> {
        if num_objectives == 0 {
            return Err(Error::Config("gradnorm needs at least one objective".into()));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be nonnegative, got {alpha}")));
        }
        if !(weight_lr > 0.0 && weight_lr.is_finite()) {
            return Err(Error::Config(format!("weight_lr must be positive, got {weight_lr}")));
        }
        Ok(Self {
            weights: vec![1.0; num_objectives],
            reference_losses: None,
            alpha,
            weight_lr,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn reference_losses(&self) -> Option<&[f64]> {
        self.reference_losses.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradNormUpdate {
    /// Σ w_m g_m with the updated weights.
    pub combined: Vec<f64>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
    /// Some reference loss was replaced by the floor.
    pub floored: bool,
}

pub fn gradnorm_step(state: &mut GradNormState, losses: &[f64], gradients: &[Vec<f64>]) -> Result<GradNormUpdate> {
    let m = state.weights.len();
    if losses.len() != m || gradients.len() != m {
        return Err(Error::Shape(format!(
            "{} losses and {} gradients for {m} objectives",
            losses.len(),
            gradients.len()
        )));
    }
    let dim = gradients[0].len();
    if gradients.iter().any(|g| g.len() != dim) {
        return Err(Error::Shape("gradients differ in dimension".into()));
    }
    if losses.iter().chain(gradients.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradnorm input".into()));
    }

    let mut floored = false;
    let l0 = state.reference_losses.get_or_insert_with(|| {
        losses
            .iter()
            .map(|&l| {
                if l.abs() < LOSS_FLOOR {
                    floored = true;
                    LOSS_FLOOR
                } else {
                    l
                }
            })
            .collect()
    });
    let ratios: Vec<f64> = losses.iter().zip(l0.iter()).map(|(l, r)| l / r).collect();
    let mean_ratio = ratios.iter().sum::<f64>() / m as f64;
    let g_norms: Vec<f64> = gradients.iter().map(|g| norm(g)).collect();
    let scaled: Vec<f64> = state.weights.iter().zip(&g_norms).map(|(w, g)| w * g).collect();
    let anchor = scaled.iter().sum::<f64>() / m as f64;
    let targets: Vec<f64> = ratios
        .iter()
        .map(|r| {
            let rel = if mean_ratio != 0.0 { r / mean_ratio } else { 1.0 };
            anchor * rel.max(0.0).powf(state.alpha)
        })
        .collect();

    for ((w, s), t) in state.weights.iter_mut().zip(&scaled).zip(&targets) {
        let diff = s - t;
        if diff.abs() > 1e-12 * t.abs().max(1.0) {
            let step = state.weight_lr * diff.signum();
            // Keep weights strictly positive.
            *w = (*w - step).max(state.weight_lr * 1e-3);
        }
    }
    let total: f64 = state.weights.iter().sum();
    state.weights.iter_mut().for_each(|w| *w *= m as f64 / total);

    let mut combined = vec![0.0; dim];
    for (w, g) in state.weights.iter().zip(gradients) {
        for (c, v) in combined.iter_mut().zip(g) {
            *c += w * v;
        }
    }
    Ok(GradNormUpdate {
        combined,
        targets,
        weights: state.weights.clone(),
        floored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_call_targets_mean() {
        let mut s = GradNormState::new(3, 1.5, 0.025).unwrap();
        let g = vec![vec![3.0, 0.0], vec![0.0, 1.0], vec![0.0, 2.0]];
        let up = gradnorm_step(&mut s, &[0.5, 0.7, 0.9], &g).unwrap();
        assert_eq!(s.reference_losses().unwrap(), &[0.5, 0.7, 0.9]);
        for t in &up.targets {
            assert!((t - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_case_keeps_unit_weights() {
        let mut s = GradNormState::new(2, 1.5, 0.025).unwrap();
        let up = gradnorm_step(&mut s, &[1.0, 1.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(up.weights, vec![1.0, 1.0]);
    }

    #[test]
    fn signed_step_direction() {
        let mut s = GradNormState::new(2, 1.5, 0.025).unwrap();
        let up = gradnorm_step(&mut s, &[1.0, 1.0], &[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(up.weights[0] < 1.0 && up.weights[1] > 1.0);
        assert!((up.weights.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!((up.weights[0] - 0.975).abs() < 1e-12);
        assert_eq!(up.combined, vec![2.0 * up.weights[0], up.weights[1]]);
    }

    #[test]
    fn zero_reference_loss_floored() {
        let mut s = GradNormState::new(2, 1.0, 0.025).unwrap();
        let up = gradnorm_step(&mut s, &[0.0, 1.0], &[vec![1.0], vec![1.0]]).unwrap();
        assert!(up.floored);
        assert_eq!(s.reference_losses().unwrap()[0], 1e-8);
    }
}
