//! Exact policy gradients by a backward pass over the prefix tree.

use crate::calculus::{dot, norm};
use crate::env::{RewardTable, ScoreTable};
use crate::error::Result;
use crate::policy::TabularPolicy;

/// Adds `weight * ∇θ E_{y~p(.|x)}[s(y)]` into `out`.
///
/// For the block at prefix q of length l the gradient is
/// reach(q) · π_q ⊙ (Q(q·t) − V(q)), where Q and V are the prefix value recursions.
pub(crate) fn accumulate_prompt_gradient(
    policy: &TabularPolicy,
    prompt: usize,
    scores: &[f64],
    weight: f64,
    out: &mut [f64],
) {
    let env = policy.env();
    let v = env.vocab_size();
    let depth = env.out_len();
    let probs: Vec<Vec<Vec<f64>>> = policy
        .prefix_log_probs(prompt)
        .into_iter()
        .map(|lvl| {
            lvl.into_iter()
                .map(|b| b.into_iter().map(f64::exp).collect())
                .collect()
        })
        .collect();

    let mut reach = Vec::with_capacity(depth);
    reach.push(vec![1.0]);
    for l in 0..depth - 1 {
        let prev: &Vec<f64> = &reach[l];
        let mut next = Vec::with_capacity(prev.len() * v);
        for (q, r) in prev.iter().enumerate() {
            next.extend(probs[l][q].iter().map(|p| r * p));
        }
        reach.push(next);
    }

    let mut child = scores.to_vec();
    for l in (0..depth).rev() {
        let mut vals = Vec::with_capacity(child.len() / v);
        for q in 0..env.prefixes_at(l) {
            let pi = &probs[l][q];
            let c = &child[q * v..(q + 1) * v];
            let vq = dot(pi, c);
            let off = env.block_offset(env.block_index(prompt, l, q));
            let scale = weight * reach[l][q];
            if scale != 0.0 {
                for t in 0..v {
                    out[off + t] += scale * pi[t] * (c[t] - vq);
                }
            }
            vals.push(vq);
        }
        child = vals;
    }
}

/// ∇θ E_x E_y[s(x,y)] with uniform prompt weights.
pub fn policy_gradient_value(policy: &TabularPolicy, scores: &ScoreTable) -> Result<Vec<f64>> {
    let env = policy.env();
    scores.check_env(env)?;
    let mut g = vec![0.0; env.num_params()];
    let w = 1.0 / env.num_prompts() as f64;
    for x in 0..env.num_prompts() {
        accumulate_prompt_gradient(policy, x, scores.prompt(x), w, &mut g);
    }
    Ok(g)
}

/// ∇θ V(x; θ) for a single prompt (no 1/P factor), full-length vector.
pub fn prompt_value_gradient(
    policy: &TabularPolicy,
    scores: &ScoreTable,
    prompt: usize,
) -> Result<Vec<f64>> {
    let env = policy.env();
    scores.check_env(env)?;
    env.check_prompt(prompt)?;
    let mut g = vec![0.0; env.num_params()];
    accumulate_prompt_gradient(policy, prompt, scores.prompt(prompt), 1.0, &mut g);
    Ok(g)
}

pub fn per_objective_gradients(policy: &TabularPolicy, rewards: &RewardTable) -> Result<Vec<Vec<f64>>> {
    rewards.check_env(policy.env())?;
    (0..rewards.num_objectives())
        .map(|m| policy_gradient_value(policy, &rewards.objective(m)))
        .collect()
}

/// E_x KL(p_θ(.|x) ‖ p_ref(.|x)).
pub fn kl_divergence(policy: &TabularPolicy, reference: &TabularPolicy) -> f64 {
    let env = policy.env();
    let mut total = 0.0;
    for x in 0..env.num_prompts() {
        let lp = policy.completion_log_probs(x);
        let lq = reference.completion_log_probs(x);
        total += lp
            .iter()
            .zip(&lq)
            .map(|(a, b)| {
                let p = a.exp();
                if p > 0.0 {
                    p * (a - b)
                } else {
                    0.0
                }
            })
            .sum::<f64>();
    }
    total / env.num_prompts() as f64
}

/// ∇θ E_x KL(p_θ ‖ p_ref) = E[(log p_θ − log p_ref) ∇ log p_θ].
pub fn kl_gradient(policy: &TabularPolicy, reference: &TabularPolicy) -> Vec<f64> {
    let env = policy.env();
    let mut g = vec![0.0; env.num_params()];
    let w = 1.0 / env.num_prompts() as f64;
    for x in 0..env.num_prompts() {
        let s: Vec<f64> = policy
            .completion_log_probs(x)
            .iter()
            .zip(reference.completion_log_probs(x))
            .map(|(a, b)| a - b)
            .collect();
        accumulate_prompt_gradient(policy, x, &s, w, &mut g);
    }
    g
}

/// E_x H(p_θ(.|x)) over completions.
pub fn entropy(policy: &TabularPolicy) -> f64 {
    let env = policy.env();
    let mut total = 0.0;
    for x in 0..env.num_prompts() {
        total -= policy
            .completion_log_probs(x)
            .iter()
            .map(|a| {
                let p = a.exp();
                if p > 0.0 {
                    p * a
                } else {
                    0.0
                }
            })
            .sum::<f64>();
    }
    total / env.num_prompts() as f64
}

/// ∇θ E_x H = E[(−log p_θ) ∇ log p_θ].
pub fn entropy_gradient(policy: &TabularPolicy) -> Vec<f64> {
    let env = policy.env();
    let mut g = vec![0.0; env.num_params()];
    let w = 1.0 / env.num_prompts() as f64;
    for x in 0..env.num_prompts() {
        let s: Vec<f64> = policy.completion_log_probs(x).iter().map(|a| -a).collect();
        accumulate_prompt_gradient(policy, x, &s, w, &mut g);
    }
    g
}

/// R = β ∇KL(p_θ‖p_ref) − λ ∇H(p_θ).
pub fn regularizer_gradient(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    beta_kl: f64,
    lambda_entropy: f64,
) -> Vec<f64> {
    let mut r = vec![0.0; policy.env().num_params()];
    if beta_kl != 0.0 {
        for (a, b) in r.iter_mut().zip(kl_gradient(policy, reference)) {
            *a += beta_kl * b;
        }
    }
    if lambda_entropy != 0.0 {
        for (a, b) in r.iter_mut().zip(entropy_gradient(policy)) {
            *a -= lambda_entropy * b;
        }
    }
    r
}

/// Symmetric cosine matrix; `None` where a zero gradient makes the entry undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineMatrix {
    size: usize,
    entries: Vec<Option<f64>>,
}

impl CosineMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.size + j]
    }

    /// Minimum over defined off-diagonal entries.
    pub fn min_off_diagonal(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..self.size {
            for j in i + 1..self.size {
                if let Some(c) = self.get(i, j) {
                    best = Some(best.map_or(c, |b| b.min(c)));
                }
            }
        }
        best
    }
}

pub fn gradient_cosines(gradients: &[Vec<f64>]) -> CosineMatrix {
    let m = gradients.len();
    let norms: Vec<f64> = gradients.iter().map(|g| norm(g)).collect();
    let mut entries = vec![None; m * m];
    for i in 0..m {
        for j in i..m {
            if norms[i] > 0.0 && norms[j] > 0.0 {
                let c = if i == j {
                    1.0
                } else {
                    (dot(&gradients[i], &gradients[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                };
                entries[i * m + j] = Some(c);
                entries[j * m + i] = Some(c);
            }
        }
    }
    CosineMatrix { size: m, entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvSpec;

    fn random_policy(env: &EnvSpec, k: f64) -> TabularPolicy {
        let logits = (0..env.num_params())
            .map(|i| 2.0 * ((i as f64 + 1.0) * k).sin())
            .collect();
        TabularPolicy::from_logits(env, logits).unwrap()
    }

    #[test]
    fn hand_gradient() {
        let env = EnvSpec::new(1, 2, 1, 1, 1.0).unwrap();
        let pol = TabularPolicy::uniform(&env);
        let s = ScoreTable::new(1, 2, vec![1.0, 0.0]).unwrap();
        let g = policy_gradient_value(&pol, &s).unwrap();
        // 0.5 · 1 · (1 − 0.5, 0 − 0.5)
        assert!((g[0] - 0.25).abs() < 1e-15 && (g[1] + 0.25).abs() < 1e-15);
        let v = |d: f64| {
            let p = TabularPolicy::from_logits(&env, vec![d, 0.0]).unwrap();
            p.value(&s)
        };
        let fd = (v(1e-5) - v(-1e-5)) / 2e-5;
        assert!((fd - g[0]).abs() < 1e-9);
    }

    #[test]
    fn constant_score_zero_gradient() {
        let env = EnvSpec::new(2, 3, 3, 1, 1.0).unwrap();
        let pol = random_policy(&env, 0.7);
        let g = policy_gradient_value(&pol, &ScoreTable::constant(&env, 3.0)).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn objective_gradients_linear() {
        let env = EnvSpec::new(2, 2, 2, 2, 2.0).unwrap();
        let pol = random_policy(&env, 1.3);
        let r = RewardTable::from_fn(&env, |x, y, m| {
            let base = (((x * 4 + y) as f64) * 0.9).sin();
            if m == 0 { base } else { 2.0 * base }
        })
        .unwrap();
        let g = per_objective_gradients(&pol, &r).unwrap();
        for (a, b) in g[0].iter().zip(&g[1]) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        let single = policy_gradient_value(&pol, &r.objective(0)).unwrap();
        assert_eq!(single, g[0]);

        let neg = RewardTable::from_fn(&env, |x, y, m| {
            let base = (((x * 4 + y) as f64) * 0.9).sin();
            if m == 0 { base } else { -base }
        })
        .unwrap();
        let g = per_objective_gradients(&pol, &neg).unwrap();
        let c = gradient_cosines(&g);
        assert!((c.get(0, 1).unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn kl_gradient_vanishes_at_reference() {
        let env = EnvSpec::new(2, 3, 2, 1, 1.0).unwrap();
        let pol = random_policy(&env, 0.4);
        assert!(kl_gradient(&pol, &pol).iter().all(|v| v.abs() < 1e-10));
        assert!(kl_divergence(&pol, &pol).abs() < 1e-15);
    }

    #[test]
    fn cosine_examples() {
        let c = gradient_cosines(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert!((c.get(0, 1).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let c = gradient_cosines(&[vec![1.0, 0.0], vec![0.0, 3.0]]);
        assert!(c.get(0, 1).unwrap().abs() < 1e-12);
        let c = gradient_cosines(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert!((c.get(0, 1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(c.get(0, 0), Some(1.0));
        let c = gradient_cosines(&[vec![1.0, 2.0], vec![0.0, 0.0]]);
        assert_eq!(c.get(0, 1), None);
        assert_eq!(c.get(1, 1), None);
        assert_eq!(c.min_off_diagonal(), None);
    }
}
