//! GRPO group advantages, clipped token weights and expected group gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvSpec, ScoreTable};
use crate::error::{Error, Result};
use crate::policy::{log_softmax, TabularPolicy};

pub const STD_FLOOR: f64 = 1e-8;

/// A_i = (s_i − mean) / max(std, floor) with population std; all-equal scores give zeros.
pub fn grpo_advantages(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(Error::InvalidGroup(format!(
            "group size {} < 2",
            scores.len()
        )));
    }
    if scores.iter().all(|s| *s == scores[0]) {
        return Ok(vec![0.0; scores.len()]);
    }
    let k = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / k;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / k;
    let std = var.sqrt().max(STD_FLOOR);
    Ok(scores.iter().map(|s| (s - mean) / std).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipState {
    pub ratio: f64,
    pub indicator: bool,
    pub clipped_weight: f64,
    pub advantage: f64,
}

/// 1 iff (A ≥ 0 and ρ ≤ 1+ε) or (A < 0 and ρ ≥ 1−ε).
pub fn clip_indicator(advantage: f64, ratio: f64, eps_clip: f64) -> bool {
    if advantage >= 0.0 {
        ratio <= 1.0 + eps_clip
    } else {
        ratio >= 1.0 - eps_clip
    }
}

fn check_eps(eps_clip: f64) -> Result<()> {
    if !(eps_clip > 0.0 && eps_clip < 1.0) {
        return Err(Error::InvalidInput(format!(
            "eps_clip must lie in (0, 1), got {eps_clip}"
        )));
    }
    Ok(())
}

pub(crate) fn clip_states_from_log_probs(
    new_lp: &[f64],
    old_lp: &[f64],
    advantage: f64,
    eps_clip: f64,
) -> Result<Vec<ClipState>> {
    new_lp
        .iter()
        .zip(old_lp)
        .map(|(n, o)| {
            if *o == f64::NEG_INFINITY {
                return Err(Error::InvalidSample(
                    "token has zero probability under the old policy".into(),
                ));
            }
            let ratio = (n - o).exp();
            let indicator = clip_indicator(advantage, ratio, eps_clip);
            let clipped_weight = if indicator { advantage * ratio } else { 0.0 };
            Ok(ClipState {
                ratio,
                indicator,
                clipped_weight,
                advantage,
            })
        })
        .collect()
}

/// Per-token ratios, indicators and clipped weights W = A ρ 1 for one completion.
pub fn clip_state(
    policy: &TabularPolicy,
    old_policy: &TabularPolicy,
    prompt: usize,
    completion: usize,
    advantage: f64,
    eps_clip: f64,
) -> Result<Vec<ClipState>> {
    check_eps(eps_clip)?;
    policy.env().check_prompt(prompt)?;
    if completion >= policy.env().num_completions() {
        return Err(Error::InvalidInput(format!("completion {completion} out of range")));
    }
    clip_states_from_log_probs(
        &policy.token_log_probs(prompt, completion),
        &old_policy.token_log_probs(prompt, completion),
        advantage,
        eps_clip,
    )
}

/// Mean of the clipped weights over tokens.
pub fn completion_weight(states: &[ClipState]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::InvalidInput("empty clip-state sequence".into()));
    }
    Ok(states.iter().map(|s| s.clipped_weight).sum::<f64>() / states.len() as f64)
}

/// Adds Σ_l coef_l φ_l(x, y; θ) into `out`, where φ_l = e_{y_l} − π(.|prefix) in its block.
pub(crate) fn accumulate_token_features(
    policy: &TabularPolicy,
    prompt: usize,
    completion: usize,
    coef: &[f64],
    out: &mut [f64],
) {
    let env = policy.env();
    for (l, c) in coef.iter().enumerate() {
        if *c == 0.0 {
            continue;
        }
        let b = env.block_index(prompt, l, env.prefix_of(completion, l));
        let off = env.block_offset(b);
        let lp = log_softmax(policy.block(b));
        let tok = env.token(completion, l);
        for (t, v) in lp.iter().enumerate() {
            let e = if t == tok { 1.0 } else { 0.0 };
            out[off + t] += c * (e - v.exp());
        }
    }
}

/// One sampled GRPO group for a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub prompt: usize,
    pub completions: Vec<usize>,
    pub scores: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Token log-probabilities under the sampling (old) policy.
    pub old_token_log_probs: Vec<Vec<f64>>,
}

impl GroupSample {
    /// Draws K completions from `old_policy` and normalizes their scores.
    pub fn draw<R: Rng + ?Sized>(
        old_policy: &TabularPolicy,
        prompt: usize,
        scores: &ScoreTable,
        group_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if group_size < 2 {
            return Err(Error::InvalidGroup(format!("group size {group_size} < 2")));
        }
        let mut completions = Vec::with_capacity(group_size);
        let mut old_token_log_probs = Vec::with_capacity(group_size);
        for _ in 0..group_size {
            let s = old_policy.sample_completion(prompt, rng)?;
            completions.push(s.completion);
            old_token_log_probs.push(s.token_log_probs);
        }
        let group_scores: Vec<f64> = completions.iter().map(|&y| scores.get(prompt, y)).collect();
        let advantages = grpo_advantages(&group_scores)?;
        Ok(Self {
            prompt,
            completions,
            scores: group_scores,
            advantages,
            old_token_log_probs,
        })
    }

    pub fn group_size(&self) -> usize {
        self.completions.len()
    }

    pub fn clip_states(&self, policy: &TabularPolicy, eps_clip: f64) -> Result<Vec<Vec<ClipState>>> {
        check_eps(eps_clip)?;
        self.completions
            .iter()
            .zip(&self.old_token_log_probs)
            .zip(&self.advantages)
            .map(|((&y, old), &a)| {
                clip_states_from_log_probs(&policy.token_log_probs(self.prompt, y), old, a, eps_clip)
            })
            .collect()
    }

    /// Completion-level weights w(x, y_k; θ) = mean_l W_{k,l}.
    pub fn completion_weights(&self, policy: &TabularPolicy, eps_clip: f64) -> Result<Vec<f64>> {
        self.clip_states(policy, eps_clip)?
            .iter()
            .map(|s| completion_weight(s))
            .collect()
    }

    /// Adds scale · Σ_k Σ_l W_{k,l} φ_{k,l} (the clipped-surrogate gradient) into `out`.
    pub fn accumulate_surrogate_gradient(
        &self,
        policy: &TabularPolicy,
        eps_clip: f64,
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        for (states, &y) in self.clip_states(policy, eps_clip)?.iter().zip(&self.completions) {
            let coef: Vec<f64> = states.iter().map(|s| scale * s.clipped_weight).collect();
            accumulate_token_features(policy, self.prompt, y, &coef, out);
        }
        Ok(())
    }
}

/// How the expectation over GRPO groups is taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupEstimation {
    /// Enumerate group count-multisets; error above `max_multisets`.
    Exact { max_multisets: usize },
    /// Average over `groups` sampled groups per prompt.
    MonteCarlo { groups: usize, seed: u64 },
    /// Exact when within `max_multisets`, otherwise Monte Carlo.
    Auto {
        max_multisets: usize,
        groups: usize,
        seed: u64,
    },
}

impl GroupEstimation {
    pub const DEFAULT_MAX_MULTISETS: usize = 200_000;
}

impl Default for GroupEstimation {
    fn default() -> Self {
        GroupEstimation::Exact {
            max_multisets: Self::DEFAULT_MAX_MULTISETS,
        }
    }
}

/// E over groups of Σ_k Σ_l w_{k,l} φ_{k,l}, averaged over prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupGradients {
    pub unclipped: Vec<f64>,
    pub clipped: Vec<f64>,
    /// False when any prompt fell back to Monte Carlo.
    pub exact: bool,
}

/// Number of K-multisets over n items, saturating at u128::MAX.
pub(crate) fn multiset_count(n: usize, k: usize) -> u128 {
    if n == 0 {
        return u128::from(k == 0);
    }
    // C(n + k − 1, k) built incrementally; each partial product is an integer
    let mut c: u128 = 1;
    for i in 1..=k as u128 {
        match c.checked_mul(n as u128 - 1 + i) {
            Some(v) => c = v / i,
            None => return u128::MAX,
        }
    }
    c
}

fn for_each_composition(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(pos: usize, remaining: usize, counts: &mut [usize], f: &mut impl FnMut(&[usize])) {
        if pos + 1 == counts.len() {
            counts[pos] = remaining;
            f(counts);
            return;
        }
        for c in 0..=remaining {
            counts[pos] = c;
            rec(pos + 1, remaining - c, counts, f);
        }
    }
    let mut counts = vec![0; n];
    rec(0, k, &mut counts, f);
}

/// Adds weight · c_y · A_y into coef_pos / coef_neg for one group given by counts over `support`.
fn accumulate_group(
    counts: &[usize],
    support_scores: &[f64],
    weight: f64,
    group_size: usize,
    coef_pos: &mut [f64],
    coef_neg: &mut [f64],
) {
    let k = group_size as f64;
    let mut first: Option<f64> = None;
    let mut all_equal = true;
    let mut mean = 0.0;
    for (c, s) in counts.iter().zip(support_scores) {
        if *c > 0 {
            mean += *c as f64 * s;
            match first {
                None => first = Some(*s),
                Some(f) if f != *s => all_equal = false,
                _ => {}
            }
        }
    }
    if all_equal {
        return;
    }
    mean /= k;
    let var = counts
        .iter()
        .zip(support_scores)
        .map(|(c, s)| *c as f64 * (s - mean) * (s - mean))
        .sum::<f64>()
        / k;
    let std = var.sqrt().max(STD_FLOOR);
    for (i, (c, s)) in counts.iter().zip(support_scores).enumerate() {
        if *c > 0 {
            let a = (s - mean) / std;
            let w = weight * *c as f64 * a;
            if a >= 0.0 {
                coef_pos[i] += w;
            } else {
                coef_neg[i] += w;
            }
        }
    }
}

/// Expected Σ_k c_k A_k split by advantage sign, per completion of one prompt.
fn group_coefficients(
    old_probs: &[f64],
    scores: &[f64],
    group_size: usize,
    estimation: GroupEstimation,
    prompt: usize,
) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let support: Vec<usize> = (0..old_probs.len()).filter(|&y| old_probs[y] > 0.0).collect();
    let n = support.len();
    let support_scores: Vec<f64> = support.iter().map(|&y| scores[y]).collect();
    let mut pos = vec![0.0; n];
    let mut neg = vec![0.0; n];
    let count = multiset_count(n, group_size);
    let (exact, groups, seed) = match estimation {
        GroupEstimation::Exact { max_multisets } => {
            if count > max_multisets as u128 {
                return Err(Error::Capacity(format!(
                    "{count} group multisets exceed exact-enumeration cap {max_multisets}"
                )));
            }
            (true, 0, 0)
        }
        GroupEstimation::MonteCarlo { groups, seed } => (false, groups, seed),
        GroupEstimation::Auto {
            max_multisets,
            groups,
            seed,
        } => (count <= max_multisets as u128, groups, seed),
    };
    if exact {
        let ln_fact: Vec<f64> = std::iter::once(0.0)
            .chain((1..=group_size).scan(0.0, |acc, i| {
                *acc += (i as f64).ln();
                Some(*acc)
            }))
            .collect();
        let ln_p: Vec<f64> = support.iter().map(|&y| old_probs[y].ln()).collect();
        for_each_composition(n, group_size, &mut |counts| {
            let mut lw = ln_fact[group_size];
            for (c, lp) in counts.iter().zip(&ln_p) {
                if *c > 0 {
                    lw += *c as f64 * lp - ln_fact[*c];
                }
            }
            accumulate_group(counts, &support_scores, lw.exp(), group_size, &mut pos, &mut neg);
        });
    } else {
        if groups == 0 {
            return Err(Error::InvalidInput("Monte Carlo estimate needs groups > 0".into()));
        }
        // stream keyed by prompt so prompts are independent of evaluation order
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(prompt as u64);
        let cdf: Vec<f64> = support
            .iter()
            .scan(0.0, |acc, &y| {
                *acc += old_probs[y];
                Some(*acc)
            })
            .collect();
        let total = *cdf.last().unwrap_or(&1.0);
        let w = 1.0 / groups as f64;
        let mut counts = vec![0usize; n];
        for _ in 0..groups {
            counts.iter_mut().for_each(|c| *c = 0);
            for _ in 0..group_size {
                let u = rng.gen::<f64>() * total;
                let i = cdf.partition_point(|c| *c <= u).min(n - 1);
                counts[i] += 1;
            }
            accumulate_group(&counts, &support_scores, w, group_size, &mut pos, &mut neg);
        }
    }
    let mut full_pos = vec![0.0; old_probs.len()];
    let mut full_neg = vec![0.0; old_probs.len()];
    for (i, &y) in support.iter().enumerate() {
        full_pos[y] = pos[i];
        full_neg[y] = neg[i];
    }
    Ok((full_pos, full_neg, exact))
}

/// G^unclip and G^clip: expectations over groups drawn from `old_policy` of
/// Σ_k Σ_l w_{k,l} φ_{k,l}(θ), with φ at `policy` and prompts weighted 1/P.
pub fn expected_group_gradients(
    policy: &TabularPolicy,
    old_policy: &TabularPolicy,
    scores: &ScoreTable,
    group_size: usize,
    eps_clip: f64,
    estimation: GroupEstimation,
) -> Result<GroupGradients> {
    check_eps(eps_clip)?;
    if group_size < 2 {
        return Err(Error::InvalidGroup(format!("group size {group_size} < 2")));
    }
    let env: &EnvSpec = policy.env();
    scores.check_env(env)?;
    let np = env.num_prompts();
    let mut unclipped = vec![0.0; env.num_params()];
    let mut clipped = vec![0.0; env.num_params()];
    let mut all_exact = true;
    for x in 0..np {
        let old_lp = old_policy.completion_log_probs(x);
        let old_probs: Vec<f64> = old_lp.iter().map(|v| v.exp()).collect();
        let (pos, neg, exact) =
            group_coefficients(&old_probs, scores.prompt(x), group_size, estimation, x)?;
        all_exact &= exact;
        let scale = 1.0 / np as f64;
        for y in 0..env.num_completions() {
            if pos[y] == 0.0 && neg[y] == 0.0 {
                continue;
            }
            let new_tok = policy.token_log_probs(x, y);
            let old_tok = old_policy.token_log_probs(x, y);
            let ratios: Vec<f64> = new_tok.iter().zip(&old_tok).map(|(n, o)| (n - o).exp()).collect();
            for (coef, positive) in [(pos[y], true), (neg[y], false)] {
                if coef == 0.0 {
                    continue;
                }
                let sign = if positive { 1.0 } else { -1.0 };
                let unc: Vec<f64> = ratios.iter().map(|r| scale * coef * r).collect();
                let clp: Vec<f64> = ratios
                    .iter()
                    .map(|r| {
                        let ind = if clip_indicator(sign, *r, eps_clip) { 1.0 } else { 0.0 };
                        scale * coef * r * ind
                    })
                    .collect();
                accumulate_token_features(policy, x, y, &unc, &mut unclipped);
                accumulate_token_features(policy, x, y, &clp, &mut clipped);
            }
        }
    }
    Ok(GroupGradients {
        unclipped,
        clipped,
        exact: all_exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantage_examples() {
        assert_eq!(grpo_advantages(&[1.0, 0.0, 1.0, 0.0]).unwrap(), vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(grpo_advantages(&[3.0, 1.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(grpo_advantages(&[0.4; 5]).unwrap(), vec![0.0; 5]);
        assert!(matches!(grpo_advantages(&[1.0]), Err(Error::InvalidGroup(_))));
    }

    #[test]
    fn indicator_examples() {
        let s = clip_states_from_log_probs(&[1.5f64.ln()], &[0.0], 1.0, 0.2).unwrap()[0];
        assert!(!s.indicator);
        assert_eq!(s.clipped_weight, 0.0);
        let s = clip_states_from_log_probs(&[1.5f64.ln()], &[0.0], -1.0, 0.2).unwrap()[0];
        assert!(s.indicator);
        assert!((s.clipped_weight + 1.5).abs() < 1e-15);
        assert!(clip_indicator(0.0, 1.2, 0.2));
        assert!(!clip_indicator(-0.5, 0.79, 0.2));
    }

    #[test]
    fn identity_at_old_policy() {
        let env = EnvSpec::new(1, 3, 2, 1, 1.0).unwrap();
        let logits: Vec<f64> = (0..env.num_params()).map(|i| (i as f64 * 0.7).cos()).collect();
        let pol = TabularPolicy::from_logits(&env, logits).unwrap();
        for y in 0..env.num_completions() {
            let st = clip_state(&pol, &pol, 0, y, 1.5, 0.2).unwrap();
            assert!(st.iter().all(|s| s.ratio == 1.0 && s.indicator && s.clipped_weight == 1.5));
            assert_eq!(completion_weight(&st).unwrap(), 1.5);
        }
        assert!(clip_state(&pol, &pol, 0, 0, 1.0, 1.0).is_err());
    }

    #[test]
    fn completion_weight_mean() {
        let mk = |w: f64| ClipState {
            ratio: 1.0,
            indicator: true,
            clipped_weight: w,
            advantage: w,
        };
        assert_eq!(completion_weight(&[mk(2.0), mk(0.0)]).unwrap(), 1.0);
        assert!(completion_weight(&[]).is_err());
    }

    #[test]
    fn multiset_counts() {
        assert_eq!(multiset_count(2, 2), 3);
        assert_eq!(multiset_count(4, 16), 969);
        assert_eq!(multiset_count(1, 7), 1);
        let mut n = 0;
        for_each_composition(3, 4, &mut |c| {
            assert_eq!(c.iter().sum::<usize>(), 4);
            n += 1;
        });
        assert_eq!(n as u128, multiset_count(3, 4));
    }

    #[test]
    fn exact_groups_agree_with_monte_carlo() {
        let env = EnvSpec::new(2, 2, 2, 1, 1.0).unwrap();
        let old: Vec<f64> = (0..env.num_params()).map(|i| (i as f64 * 1.1).sin()).collect();
        let new: Vec<f64> = old.iter().enumerate().map(|(i, v)| v + 0.3 * (i as f64).cos()).collect();
        let old = TabularPolicy::from_logits(&env, old).unwrap();
        let new = TabularPolicy::from_logits(&env, new).unwrap();
        let s = ScoreTable::from_fn(&env, |x, y| ((x * 3 + y) as f64 * 0.8).sin()).unwrap();
        let ex = expected_group_gradients(&new, &old, &s, 4, 0.1, GroupEstimation::default()).unwrap();
        let mc = expected_group_gradients(
            &new,
            &old,
            &s,
            4,
            0.1,
            GroupEstimation::MonteCarlo { groups: 200_000, seed: 3 },
        )
        .unwrap();
        assert!(ex.exact && !mc.exact);
        for (a, b) in ex.clipped.iter().zip(&mc.clipped) {
            assert!((a - b).abs() < 2e-2, "{a} vs {b}");
        }
        for (a, b) in ex.unclipped.iter().zip(&mc.unclipped) {
            assert!((a - b).abs() < 2e-2, "{a} vs {b}");
        }
    }

    #[test]
    fn old_policy_gradients_coincide() {
        let env = EnvSpec::new(1, 3, 2, 1, 1.0).unwrap();
        let logits: Vec<f64> = (0..env.num_params()).map(|i| (i as f64 * 0.3).sin()).collect();
        let pol = TabularPolicy::from_logits(&env, logits).unwrap();
        let s = ScoreTable::from_fn(&env, |_, y| (y % 4) as f64).unwrap();
        let g = expected_group_gradients(&pol, &pol, &s, 3, 0.2, GroupEstimation::default()).unwrap();
        assert_eq!(g.unclipped, g.clipped);
    }
}
