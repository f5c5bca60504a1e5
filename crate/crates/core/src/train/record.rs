use serde::{Deserialize, Serialize};

use crate::calculus::{gradient_cosines, per_objective_gradients, pl_report};
use crate::env::{RewardTable, ScoreTable};
use crate::error::Result;
use crate::policy::TabularPolicy;

/// Diagnostics emitted after every training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    /// Exact E[r_m] under the updated policy.
    pub rewards: Vec<f64>,
    /// V under the controller's current score.
    pub value: f64,
    pub weights: Vec<f64>,
    pub covariances: Vec<f64>,
    /// CTWA EMA covariances; empty for other controllers.
    pub ema: Vec<f64>,
    pub distortion: f64,
    pub min_grad_cos: f64,
    pub mu: f64,
    /// Seconds spent in the step. Not part of any deterministic output.
    pub wall_time: f64,
}

/// Cov_p(r_m, A) averaged over prompts, with A the standardized score under p.
pub fn exact_covariances(policy: &TabularPolicy, rewards: &RewardTable, scores: &ScoreTable) -> Vec<f64> {
    let env = policy.env();
    let m = rewards.num_objectives();
    let mut out = vec![0.0; m];
    for x in 0..env.num_prompts() {
        let p: Vec<f64> = policy.completion_log_probs(x).iter().map(|l| l.exp()).collect();
        let s = scores.prompt(x);
        let mean: f64 = p.iter().zip(s).map(|(a, b)| a * b).sum();
        let var: f64 = p.iter().zip(s).map(|(a, b)| a * (b - mean) * (b - mean)).sum();
        let sd = var.max(0.0).sqrt();
        if sd == 0.0 {
            continue;
        }
        let adv: Vec<f64> = s.iter().map(|v| (v - mean) / sd.max(1e-8)).collect();
        for (j, o) in out.iter_mut().enumerate() {
            let rm: f64 = (0..p.len()).map(|y| p[y] * rewards.get(x, y, j)).sum();
            *o += (0..p.len())
                .map(|y| p[y] * (rewards.get(x, y, j) - rm) * adv[y])
                .sum::<f64>();
        }
    }
    let n = env.num_prompts() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Smallest off-diagonal cosine between per-objective gradients.
/// 1 for a single objective; 0 when every pair involves a zero gradient.
pub fn min_gradient_cosine(policy: &TabularPolicy, rewards: &RewardTable) -> Result<f64> {
    if rewards.num_objectives() < 2 {
        return Ok(1.0);
    }
    let g = per_objective_gradients(policy, rewards)?;
    Ok(gradient_cosines(&g).min_off_diagonal().unwrap_or(0.0))
}

/// Minimum finite μ over prompts whose score maximizer is unique; 0 when none qualifies.
pub fn min_pl_constant(policy: &TabularPolicy, scores: &ScoreTable) -> f64 {
    (0..policy.env().num_prompts())
        .filter_map(|x| pl_report(policy, scores, x).ok())
        .map(|r| r.mu)
        .filter(|m| m.is_finite())
        .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.min(m))))
        .unwrap_or(0.0)
}
