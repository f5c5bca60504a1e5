//! Covariance-targeted weight adaptation.

use crate::error::{Error, Result};
use crate::scalarize::WeightVector;

#[derive(Debug, Clone, PartialEq)]
pub struct CtwaState {
    pub weights: WeightVector,
    /// EMA of the batch covariances, starting at 0.
    pub ema: Vec<f64>,
    pub targets: Vec<f64>,
    pub ema_rate: f64,
    pub weight_lr: f64,
}

impl CtwaState {
    pub fn new(initial_weights: &[f64], targets: &[f64], ema_rate: f64, weight_lr: f64) -> Result<Self> {
        if initial_weights.len() != targets.len() {
            return Err(Error::Config(format!(
                "{} initial weights but {} covariance targets",
                initial_weights.len(),
                targets.len()
            )));
        }
        if !(ema_rate > 0.0 && ema_rate <= 1.0) {
            return Err(Error::Config(format!("ema_rate must lie in (0, 1], got {ema_rate}")));
        }
        if !(weight_lr > 0.0 && weight_lr.is_finite()) {
            return Err(Error::Config(format!("weight_lr must be positive, got {weight_lr}")));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("covariance targets must be finite".into()));
        }
        Ok(Self {
            weights: WeightVector::from_weights(initial_weights)?,
            ema: vec![0.0; targets.len()],
            targets: targets.to_vec(),
            ema_rate,
            weight_lr,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtwaUpdate {
    pub deficits: Vec<f64>,
}

/// EMA, deficit, log-space step, exponentiate; in that order.
pub fn ctwa_step(state: &mut CtwaState, covariances: &[f64]) -> Result<CtwaUpdate> {
    if covariances.len() != state.targets.len() {
        return Err(Error::Shape(format!(
            "{} covariances for {} objectives",
            covariances.len(),
            state.targets.len()
        )));
    }
    if covariances.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("batch covariance".into()));
    }
    let tau = state.ema_rate;
    for (e, c) in state.ema.iter_mut().zip(covariances) {
        *e = (1.0 - tau) * *e + tau * c;
    }
    let deficits: Vec<f64> = state
        .targets
        .iter()
        .zip(&state.ema)
        .map(|(t, e)| (t - e).max(0.0))
        .collect();
    for (u, d) in state.weights.log_weights_mut().iter_mut().zip(&deficits) {
        *u += state.weight_lr * d;
    }
    state.weights.refresh()?;
    Ok(CtwaUpdate { deficits })
}

/// One prompt's group: per-member reward rows and completion-level weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    /// rewards[k][m].
    pub rewards: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Within-group sample covariance (divisor K−1) of r_m with w, averaged over groups.
pub fn ctwa_batch_covariance(groups: &[GroupStats], num_objectives: usize) -> Result<Vec<f64>> {
    if groups.is_empty() {
        return Err(Error::InvalidGroup("empty batch".into()));
    }
    let mut out = vec![0.0; num_objectives];
    for g in groups {
        let k = g.weights.len();
        if k < 2 || g.rewards.len() != k {
            return Err(Error::InvalidGroup(format!(
                "group with {k} weights and {} reward rows",
                g.rewards.len()
            )));
        }
        let wm = g.weights.iter().sum::<f64>() / k as f64;
        for (m, o) in out.iter_mut().enumerate() {
            let rm = g.rewards.iter().map(|r| r[m]).sum::<f64>() / k as f64;
            let cov = g
                .rewards
                .iter()
                .zip(&g.weights)
                .map(|(r, w)| (r[m] - rm) * (w - wm))
                .sum::<f64>()
                / (k - 1) as f64;
            *o += cov;
        }
    }
    let n = groups.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let mut s = CtwaState::new(&[1.0], &[0.15], 0.1, 0.05).unwrap();
        let up = ctwa_step(&mut s, &[0.05]).unwrap();
        assert!((s.ema[0] - 0.005).abs() < 1e-12);
        assert!((up.deficits[0] - 0.145).abs() < 1e-12);
        assert!((s.weights.log_weights()[0] - 0.00725).abs() < 1e-12);
        assert!((s.weights.lambda()[0] - 0.00725f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn satisfied_targets_leave_weights() {
        let mut s = CtwaState::new(&[0.5, 0.5], &[0.1, 0.1], 1.0, 0.05).unwrap();
        let before = s.weights.clone();
        ctwa_step(&mut s, &[0.2, 0.3]).unwrap();
        assert_eq!(s.weights, before);
    }

    #[test]
    fn covariance_examples() {
        let g = |r: [f64; 2], w: [f64; 2]| GroupStats {
            rewards: vec![vec![r[0]], vec![r[1]]],
            weights: w.to_vec(),
        };
        assert_eq!(ctwa_batch_covariance(&[g([1.0, 0.0], [1.0, 0.0])], 1).unwrap(), vec![0.5]);
        assert_eq!(ctwa_batch_covariance(&[g([1.0, 0.0], [0.0, 1.0])], 1).unwrap(), vec![-0.5]);
        assert_eq!(ctwa_batch_covariance(&[g([1.0, 0.0], [0.3, 0.3])], 1).unwrap(), vec![0.0]);
        let bad = GroupStats {
            rewards: vec![vec![1.0]],
            weights: vec![1.0],
        };
        assert!(matches!(ctwa_batch_covariance(&[bad], 1), Err(Error::InvalidGroup(_))));
    }
}
