//! Measured constants of the μ-PL bound for one prompt.
//!
//! In the tabular parameterization the logit map of each prefix selects one block of θ,
//! so its Jacobian has orthonormal rows: σ_min = σ_max = 1 on the row space.

use crate::calculus::gradient::prompt_value_gradient;
use crate::calculus::{dot, norm};
use crate::env::ScoreTable;
use crate::error::{Error, Result};
use crate::policy::{log_softmax, TabularPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct PLReport {
    pub mu: f64,
    pub gamma_const: f64,
    pub p_star: f64,
    pub s_star: f64,
    pub y_star: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub eps_ns: f64,
    pub c_align: f64,
    pub margin_delta_s: f64,
    pub bound: f64,
    /// ½‖∇V(x;θ)‖².
    pub lhs: f64,
    /// μ (V* − V).
    pub rhs: f64,
    pub grad_norm: f64,
    pub value: f64,
    pub v_star: f64,
    /// V* − V.
    pub value_gap: f64,
    /// 2B (1 − p*).
    pub value_gap_bound: f64,
    /// ‖Σ_l v_l(y*)‖².
    pub trajectory_sq_norm: f64,
    /// c L σ_min² ε² N/(N−1).
    pub trajectory_lower_bound: f64,
    pub non_saturated: bool,
    pub aligned: bool,
}

impl PLReport {
    /// All assumption predicates hold at this θ.
    pub fn assumptions_hold(&self) -> bool {
        self.non_saturated && self.aligned && self.margin_delta_s > 0.0
    }
}

/// Token contributions v_l(x, y; θ) as sparse (offset, values) blocks.
pub(crate) fn token_contributions(policy: &TabularPolicy, prompt: usize, completion: usize) -> Vec<(usize, Vec<f64>)> {
    let env = policy.env();
    (0..env.out_len())
        .map(|l| {
            let b = env.block_index(prompt, l, env.prefix_of(completion, l));
            let tok = env.token(completion, l);
            let v = log_softmax(policy.block(b))
                .iter()
                .enumerate()
                .map(|(t, lp)| if t == tok { 1.0 } else { 0.0 } - lp.exp())
                .collect();
            (env.block_offset(b), v)
        })
        .collect()
}

fn sparse_dot(a: &(usize, Vec<f64>), b: &(usize, Vec<f64>)) -> f64 {
    if a.0 == b.0 {
        dot(&a.1, &b.1)
    } else {
        0.0
    }
}

/// min pairwise cosine over nonzero v_l of one completion; 1 when fewer than two are nonzero.
pub(crate) fn alignment(contribs: &[(usize, Vec<f64>)]) -> f64 {
    let nz: Vec<&(usize, Vec<f64>)> = contribs.iter().filter(|c| norm(&c.1) > 0.0).collect();
    let mut c = 1.0f64;
    for i in 0..nz.len() {
        for j in i + 1..nz.len() {
            let cos = sparse_dot(nz[i], nz[j]) / (norm(&nz[i].1) * norm(&nz[j].1));
            c = c.min(cos.clamp(-1.0, 1.0));
        }
    }
    c
}

/// ‖Σ_l v_l‖² for one completion.
pub(crate) fn trajectory_sq_norm(contribs: &[(usize, Vec<f64>)]) -> f64 {
    let mut total = 0.0;
    for a in contribs {
        for b in contribs {
            total += sparse_dot(a, b);
        }
    }
    total
}

/// 1 − max next-token probability over all prefixes of `prompt`.
pub(crate) fn non_saturation_margin(policy: &TabularPolicy, prompt: usize) -> f64 {
    let max = policy
        .prefix_log_probs(prompt)
        .iter()
        .flatten()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        .exp();
    1.0 - max
}

/// PL constants with B = max |s| over the score table.
pub fn pl_report(policy: &TabularPolicy, scores: &ScoreTable, prompt: usize) -> Result<PLReport> {
    pl_report_with_bound(policy, scores, prompt, scores.bound())
}

pub fn pl_report_with_bound(
    policy: &TabularPolicy,
    scores: &ScoreTable,
    prompt: usize,
    bound: f64,
) -> Result<PLReport> {
    let env = policy.env();
    scores.check_env(env)?;
    env.check_prompt(prompt)?;
    let n = env.num_completions();
    if n < 2 {
        return Err(Error::Assumption("a single completion has no suboptimal alternative".into()));
    }
    if !(bound > 0.0) || scores.prompt(prompt).iter().any(|s| s.abs() > bound) {
        return Err(Error::Assumption(format!("scores are not bounded by B = {bound}")));
    }
    let s = scores.prompt(prompt);
    let (y_star, s_star) = s
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (y, v)| if v > acc.1 { (y, v) } else { acc });
    let runner_up = s
        .iter()
        .enumerate()
        .filter(|(y, _)| *y != y_star)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let margin_delta_s = s_star - runner_up;
    if margin_delta_s <= 0.0 {
        return Err(Error::Assumption("score maximizer is not unique".into()));
    }

    let lp = policy.completion_log_probs(prompt);
    let p_star = lp[y_star].exp();
    let value: f64 = lp.iter().zip(s).map(|(l, v)| l.exp() * v).sum();
    let v_star = s_star;
    let value_gap = v_star - value;
    let value_gap_bound = 2.0 * bound * (1.0 - p_star);

    let sigma_min = 1.0;
    let sigma_max = 1.0;
    let eps_ns = non_saturation_margin(policy, prompt);
    let contribs = token_contributions(policy, prompt, y_star);
    let c_align = alignment(&contribs);
    let nf = n as f64;
    let lower = c_align.max(0.0) * env.out_len() as f64 * sigma_min * sigma_min * eps_ns * eps_ns * nf / (nf - 1.0);
    let gamma_const = lower.sqrt();
    let mu = if p_star >= 1.0 {
        f64::INFINITY
    } else {
        (p_star / (1.0 - p_star) * s_star * gamma_const - 2.0 * bound * sigma_max) / (2.0 * bound)
    };

    let grad = prompt_value_gradient(policy, scores, prompt)?;
    let grad_norm = norm(&grad);
    let lhs = 0.5 * grad_norm * grad_norm;
    let rhs = if value_gap == 0.0 { 0.0 } else { mu * value_gap };

    Ok(PLReport {
        mu,
        gamma_const,
        p_star,
        s_star,
        y_star,
        sigma_min,
        sigma_max,
        eps_ns,
        c_align,
        margin_delta_s,
        bound,
        lhs,
        rhs,
        grad_norm,
        value,
        v_star,
        value_gap,
        value_gap_bound,
        trajectory_sq_norm: trajectory_sq_norm(&contribs),
        trajectory_lower_bound: lower,
        non_saturated: eps_ns > 0.0 && value_gap > 0.0,
        aligned: c_align > 0.0,
    })
}

/// Trajectory-gradient bound for an arbitrary completion: (‖Σ_l v_l‖², c L σ_min² ε² N/(N−1))
/// with c measured on that completion and ε measured on the prompt.
pub fn trajectory_bound(policy: &TabularPolicy, prompt: usize, completion: usize) -> (f64, f64) {
    let env = policy.env();
    let contribs = token_contributions(policy, prompt, completion);
    let c = alignment(&contribs).max(0.0);
    let eps = non_saturation_margin(policy, prompt);
    let nf = env.num_completions() as f64;
    (
        trajectory_sq_norm(&contribs),
        c * env.out_len() as f64 * eps * eps * nf / (nf - 1.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvSpec;

    #[test]
    fn two_token_example() {
        let env = EnvSpec::new(1, 2, 1, 1, 1.0).unwrap();
        let pol = TabularPolicy::from_logits(&env, vec![9f64.ln(), 0.0]).unwrap();
        let s = ScoreTable::new(1, 2, vec![1.0, 0.0]).unwrap();
        let r = pl_report(&pol, &s, 0).unwrap();
        assert!((r.p_star - 0.9).abs() < 1e-15);
        assert!((r.eps_ns - 0.1).abs() < 1e-15);
        assert!((r.gamma_const - 0.1 * 2f64.sqrt()).abs() < 1e-15);
        let expected = 0.5 * (9.0 * 0.1 * 2f64.sqrt() - 2.0);
        assert!((r.mu - expected).abs() < 1e-12);
        assert!((r.mu + 0.3636).abs() < 1e-4);
        assert_eq!(r.c_align, 1.0);
    }

    #[test]
    fn tie_rejected() {
        let env = EnvSpec::new(1, 3, 1, 1, 1.0).unwrap();
        let pol = TabularPolicy::uniform(&env);
        let s = ScoreTable::new(1, 3, vec![1.0, 1.0, 0.0]).unwrap();
        assert!(matches!(pl_report(&pol, &s, 0), Err(Error::Assumption(_))));
    }

    #[test]
    fn multi_token_orthogonal_contributions() {
        let env = EnvSpec::new(1, 2, 3, 1, 1.0).unwrap();
        let pol = TabularPolicy::uniform(&env);
        let s = ScoreTable::from_fn(&env, |_, y| if y == 5 { 1.0 } else { -0.5 }).unwrap();
        let r = pl_report(&pol, &s, 0).unwrap();
        assert_eq!(r.c_align, 0.0);
        assert!(!r.aligned);
        assert!(r.mu < 0.0);
        assert!(r.value_gap <= r.value_gap_bound + 1e-12);
    }

    #[test]
    fn near_deterministic_optimum() {
        let env = EnvSpec::new(1, 2, 1, 1, 1.0).unwrap();
        let pol = TabularPolicy::from_logits(&env, vec![30.0, 0.0]).unwrap();
        let s = ScoreTable::new(1, 2, vec![1.0, 0.0]).unwrap();
        let r = pl_report(&pol, &s, 0).unwrap();
        assert!(r.value_gap < 1e-12);
        assert!(r.lhs >= r.rhs - 1e-9);
    }
}
