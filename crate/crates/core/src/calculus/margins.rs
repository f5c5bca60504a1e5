//! Natural-gradient first-order margins and clipping distortion.
//!
//! The aggregated Fisher is block diagonal across prompts (each prompt owns a disjoint
//! parameter slice), so every F⁻¹-weighted quantity is assembled from per-prompt
//! pseudo-inverses. With uniform prompt weights F = ⊕ F_x / P, hence F⁺ = ⊕ P F_x⁺.

use crate::calculus::fisher::{fisher_aggregated_under, PseudoInverse};
use crate::calculus::gradient::{per_objective_gradients, regularizer_gradient};
use crate::calculus::grpo::{expected_group_gradients, GroupEstimation};
use crate::env::{RewardTable, ScoreTable};
use crate::error::Result;
use crate::policy::TabularPolicy;

/// Inputs of [`margins_and_distortion`].
#[derive(Debug, Clone, Copy)]
pub struct MarginQuery<'a> {
    pub policy: &'a TabularPolicy,
    pub old_policy: &'a TabularPolicy,
    /// KL reference; the old policy when `None`.
    pub reference: Option<&'a TabularPolicy>,
    pub rewards: &'a RewardTable,
    pub scores: &'a ScoreTable,
    pub group_size: usize,
    pub eps_clip: f64,
    pub beta_kl: f64,
    pub lambda_entropy: f64,
    pub estimation: GroupEstimation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    /// ∇r_mᵀ F⁻¹ (G^clip − R).
    pub gamma: Vec<f64>,
    /// ∇r_mᵀ F⁻¹ (G^unclip − R).
    pub gamma_unclip: Vec<f64>,
    /// ‖F^{−1/2}(G^unclip − G^clip)‖ on the range of F.
    pub distortion: f64,
    /// ‖F^{−1/2} ∇r_m‖.
    pub fisher_grad_norm: Vec<f64>,
    /// γ^clip ≥ γ^unclip − ‖F^{−1/2}∇r_m‖ · distortion (within 1e-9).
    pub robust: Vec<bool>,
    /// γ^unclip − ‖F^{−1/2}∇r_m‖ · distortion > 0, which certifies γ^clip > 0.
    pub certified: Vec<bool>,
    /// Some prompt's G − R had a null-space component above 1e-6 relative.
    pub inconsistent: bool,
    /// False when the group expectation fell back to Monte Carlo.
    pub exact: bool,
}

/// Per-prompt pseudo-inverses of the aggregated Fisher.
pub(crate) struct BlockFisher {
    blocks: Vec<PseudoInverse>,
    slice: usize,
    scale: f64,
}

impl BlockFisher {
    pub(crate) fn new(policy: &TabularPolicy, sampler: &TabularPolicy, group_size: usize) -> Result<Self> {
        let env = policy.env();
        let blocks = (0..env.num_prompts())
            .map(|x| PseudoInverse::new(&fisher_aggregated_under(policy, sampler, x, group_size)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            slice: env.params_per_prompt(),
            scale: env.num_prompts() as f64,
        })
    }

    /// aᵀ F⁺ b.
    pub(crate) fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.blocks
            .iter()
            .enumerate()
            .map(|(x, p)| {
                let r = x * self.slice..(x + 1) * self.slice;
                let sol = p.solve(&b[r.clone()]);
                self.scale * a[r].iter().zip(&sol).map(|(u, v)| u * v).sum::<f64>()
            })
            .sum()
    }

    /// ‖F^{+1/2} v‖.
    pub(crate) fn norm(&self, v: &[f64]) -> f64 {
        self.blocks
            .iter()
            .enumerate()
            .map(|(x, p)| self.scale * p.quad_form(&v[x * self.slice..(x + 1) * self.slice]))
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }

    pub(crate) fn inconsistent(&self, v: &[f64]) -> bool {
        self.blocks.iter().enumerate().any(|(x, p)| {
            let s = &v[x * self.slice..(x + 1) * self.slice];
            let n = s.iter().map(|u| u * u).sum::<f64>().sqrt();
            p.null_component(s) > 1e-6 * n
        })
    }
}

pub fn margins_and_distortion(q: &MarginQuery) -> Result<MarginReport> {
    let env = q.policy.env();
    q.rewards.check_env(env)?;
    q.scores.check_env(env)?;
    let groups = expected_group_gradients(
        q.policy,
        q.old_policy,
        q.scores,
        q.group_size,
        q.eps_clip,
        q.estimation,
    )?;
    let reference = q.reference.unwrap_or(q.old_policy);
    let reg = regularizer_gradient(q.policy, reference, q.beta_kl, q.lambda_entropy);
    let fisher = BlockFisher::new(q.policy, q.old_policy, q.group_size)?;

    let sub = |g: &[f64]| -> Vec<f64> { g.iter().zip(&reg).map(|(a, b)| a - b).collect() };
    let clip_dir = sub(&groups.clipped);
    let unclip_dir = sub(&groups.unclipped);
    let removed: Vec<f64> = groups
        .unclipped
        .iter()
        .zip(&groups.clipped)
        .map(|(a, b)| a - b)
        .collect();
    let distortion = fisher.norm(&removed);

    let grads = per_objective_gradients(q.policy, q.rewards)?;
    let mut gamma = Vec::with_capacity(grads.len());
    let mut gamma_unclip = Vec::with_capacity(grads.len());
    let mut fisher_grad_norm = Vec::with_capacity(grads.len());
    let mut robust = Vec::with_capacity(grads.len());
    let mut certified = Vec::with_capacity(grads.len());
    for g in &grads {
        let gc = fisher.inner(g, &clip_dir);
        let gu = fisher.inner(g, &unclip_dir);
        let fn_ = fisher.norm(g);
        let lower = gu - fn_ * distortion;
        gamma.push(gc);
        gamma_unclip.push(gu);
        fisher_grad_norm.push(fn_);
        robust.push(gc >= lower - 1e-9);
        certified.push(lower > 0.0);
    }
    Ok(MarginReport {
        gamma,
        gamma_unclip,
        distortion,
        fisher_grad_norm,
        robust,
        certified,
        inconsistent: fisher.inconsistent(&clip_dir),
        exact: groups.exact,
    })
}

/// Clipping distortion only; skips the per-objective margins.
pub(crate) fn clipping_distortion(
    policy: &TabularPolicy,
    old_policy: &TabularPolicy,
    scores: &ScoreTable,
    group_size: usize,
    eps_clip: f64,
    estimation: GroupEstimation,
) -> Result<f64> {
    let groups = expected_group_gradients(policy, old_policy, scores, group_size, eps_clip, estimation)?;
    let removed: Vec<f64> = groups
        .unclipped
        .iter()
        .zip(&groups.clipped)
        .map(|(a, b)| a - b)
        .collect();
    if removed.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    Ok(BlockFisher::new(policy, old_policy, group_size)?.norm(&removed))
}
