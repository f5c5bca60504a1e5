//! Lagrangian primal-dual scalarization with projected dual ascent.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    primary: usize,
    num_objectives: usize,
    /// One multiplier per constraint objective, in objective order with the primary skipped.
    pub multipliers: Vec<f64>,
    pub targets: Vec<f64>,
    pub dual_lr: f64,
}

impl LagrangianState {
    pub fn new(primary: usize, targets: &[f64], dual_lr: f64, num_objectives: usize) -> Result<Self> {
        if primary >= num_objectives {
            return Err(Error::Config(format!(
                "primary objective {primary} out of range for {num_objectives} objectives"
            )));
        }
        if targets.len() + 1 != num_objectives {
            return Err(Error::Config(format!(
                "{} constraint targets for {} objectives",
                targets.len(),
                num_objectives
            )));
        }
        if !(dual_lr > 0.0 && dual_lr.is_finite()) {
            return Err(Error::Config(format!("dual_lr must be positive, got {dual_lr}")));
        }
        Ok(Self {
            primary,
            num_objectives,
            multipliers: vec![0.0; targets.len()],
            targets: targets.to_vec(),
            dual_lr,
        })
    }

    pub fn primary(&self) -> usize {
        self.primary
    }

    /// Objective indices of the constraints.
    pub fn constraints(&self) -> Vec<usize> {
        (0..self.num_objectives).filter(|&m| m != self.primary).collect()
    }

    /// λ_k ← max{0, λ_k + η (c_k − E[r_k])}; `expectations` has one entry per objective.
    pub fn dual_update(&mut self, expectations: &[f64]) -> Result<()> {
        if expectations.len() != self.num_objectives {
            return Err(Error::Shape(format!(
                "{} expectations for {} objectives",
                expectations.len(),
                self.num_objectives
            )));
        }
        for (k, m) in self.constraints().into_iter().enumerate() {
            let gap = self.targets[k] - expectations[m];
            self.multipliers[k] = (self.multipliers[k] + self.dual_lr * gap).max(0.0);
        }
        Ok(())
    }

    /// Per-objective weights: 1 for the primary, λ_k for each constraint.
    pub fn objective_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.num_objectives];
        w[self.primary] = 1.0;
        for (k, m) in self.constraints().into_iter().enumerate() {
            w[m] = self.multipliers[k];
        }
        w
    }
}

/// Dual update, then A = A_0 + Σ λ_k A_k for every batch member.
/// `advantages[m]` holds objective m's advantages over the batch.
pub fn lagrangian_step(
    state: &mut LagrangianState,
    advantages: &[Vec<f64>],
    expectations: &[f64],
) -> Result<Vec<f64>> {
    if advantages.len() != state.num_objectives {
        return Err(Error::Shape(format!(
            "advantages for {} objectives, expected {}",
            advantages.len(),
            state.num_objectives
        )));
    }
    state.dual_update(expectations)?;
    let n = advantages[state.primary].len();
    if advantages.iter().any(|a| a.len() != n) {
        return Err(Error::Shape("ragged per-objective advantages".into()));
    }
    let w = state.objective_weights();
    Ok((0..n)
        .map(|i| {
            let mut a = advantages[state.primary][i];
            for m in state.constraints() {
                a += w[m] * advantages[m][i];
            }
            a
        })
        .collect())
}
