//! Tabular autoregressive softmax policy with one logit block per (prompt, prefix).

use rand::Rng;

use crate::env::{EnvSpec, RewardTable, ScoreTable};
use crate::error::{Error, Result};

/// Stable log-softmax of one logit block.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Distribution over all completions of one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionDist {
    probs: Vec<f64>,
}

impl CompletionDist {
    /// Entries must be nonnegative and sum to 1 within 1e-12.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput("negative or non-finite probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// No normalization check; for weights that may be all zero.
    pub fn from_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.probs.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledCompletion {
    pub completion: usize,
    pub token_log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    env: EnvSpec,
    logits: Vec<f64>,
}

impl TabularPolicy {
    /// All-zero logits (uniform next-token distributions).
    pub fn uniform(env: &EnvSpec) -> Self {
        Self {
            env: env.clone(),
            logits: vec![0.0; env.num_params()],
        }
    }

    pub fn from_logits(env: &EnvSpec, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != env.num_params() {
            return Err(Error::Shape(format!(
                "policy has {} logits, env expects {}",
                logits.len(),
                env.num_params()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy logit".into()));
        }
        Ok(Self {
            env: env.clone(),
            logits,
        })
    }

    pub fn env(&self) -> &EnvSpec {
        &self.env
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn into_logits(self) -> Vec<f64> {
        self.logits
    }

    pub fn block(&self, block: usize) -> &[f64] {
        let v = self.env.vocab_size();
        &self.logits[block * v..(block + 1) * v]
    }

    /// Next-token log-probabilities at every prefix of `prompt`, level by level.
    /// `out[l][q]` is the block for the length-l prefix with value q.
    pub fn prefix_log_probs(&self, prompt: usize) -> Vec<Vec<Vec<f64>>> {
        (0..self.env.out_len())
            .map(|l| {
                (0..self.env.prefixes_at(l))
                    .map(|q| log_softmax(self.block(self.env.block_index(prompt, l, q))))
                    .collect()
            })
            .collect()
    }

    /// log p(y|x) for every completion, accumulated in log-space.
    pub fn completion_log_probs(&self, prompt: usize) -> Vec<f64> {
        let env = &self.env;
        let v = env.vocab_size();
        let mut cur = vec![0.0];
        for l in 0..env.out_len() {
            let mut next = Vec::with_capacity(cur.len() * v);
            for (q, base) in cur.iter().enumerate() {
                let lp = log_softmax(self.block(env.block_index(prompt, l, q)));
                next.extend(lp.iter().map(|t| base + t));
            }
            cur = next;
        }
        cur
    }

    pub fn completion_dist(&self, prompt: usize) -> Result<CompletionDist> {
        self.env.check_prompt(prompt)?;
        Ok(CompletionDist::from_unchecked(
            self.completion_log_probs(prompt)
                .into_iter()
                .map(f64::exp)
                .collect(),
        ))
    }

    /// log p(y_l | x, y_<l) for each position of `completion`.
    pub fn token_log_probs(&self, prompt: usize, completion: usize) -> Vec<f64> {
        let env = &self.env;
        (0..env.out_len())
            .map(|l| {
                let b = env.block_index(prompt, l, env.prefix_of(completion, l));
                log_softmax(self.block(b))[env.token(completion, l)]
            })
            .collect()
    }

    /// Draws a completion token by token with inverse-CDF sampling.
    pub fn sample_completion<R: Rng + ?Sized>(
        &self,
        prompt: usize,
        rng: &mut R,
    ) -> Result<SampledCompletion> {
        self.env.check_prompt(prompt)?;
        let env = &self.env;
        let mut prefix = 0usize;
        let mut token_log_probs = Vec::with_capacity(env.out_len());
        for l in 0..env.out_len() {
            let lp = log_softmax(self.block(env.block_index(prompt, l, prefix)));
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = None;
            for (t, v) in lp.iter().enumerate() {
                acc += v.exp();
                if u < acc {
                    chosen = Some(t);
                    break;
                }
            }
            // rounding can leave u above the last cumulative value
            let t = chosen.unwrap_or_else(|| {
                lp.iter()
                    .rposition(|v| v.exp() > 0.0)
                    .unwrap_or(lp.len() - 1)
            });
            token_log_probs.push(lp[t]);
            prefix = prefix * env.vocab_size() + t;
        }
        Ok(SampledCompletion {
            completion: prefix,
            token_log_probs,
        })
    }

    /// E_x E_y[s(x,y)] under a uniform prompt distribution.
    pub fn value(&self, scores: &ScoreTable) -> f64 {
        let p = self.env.num_prompts();
        (0..p).map(|x| self.prompt_value(scores, x)).sum::<f64>() / p as f64
    }

    /// V(x; θ) = E_y[s(x,y)].
    pub fn prompt_value(&self, scores: &ScoreTable, prompt: usize) -> f64 {
        self.completion_log_probs(prompt)
            .iter()
            .zip(scores.prompt(prompt))
            .map(|(lp, s)| lp.exp() * s)
            .sum()
    }

    pub fn expected_reward(&self, rewards: &RewardTable, objective: usize) -> f64 {
        let m = rewards.num_objectives();
        let p = self.env.num_prompts();
        let mut total = 0.0;
        for x in 0..p {
            for (y, lp) in self.completion_log_probs(x).iter().enumerate() {
                total += lp.exp() * rewards.values()[(x * rewards.num_completions() + y) * m + objective];
            }
        }
        total / p as f64
    }

    /// Exact expected reward for every objective.
    pub fn expected_rewards(&self, rewards: &RewardTable) -> Vec<f64> {
        let m = rewards.num_objectives();
        let p = self.env.num_prompts();
        let mut out = vec![0.0; m];
        for x in 0..p {
            for (y, lp) in self.completion_log_probs(x).iter().enumerate() {
                let w = lp.exp();
                for (o, r) in out.iter_mut().zip(rewards.row(x, y)) {
                    *o += w * r;
                }
            }
        }
        out.iter_mut().for_each(|o| *o /= p as f64);
        out
    }

    /// Returns a copy with `delta` added to the logits.
    pub fn shifted(&self, delta: &[f64], scale: f64) -> Self {
        let logits = self
            .logits
            .iter()
            .zip(delta)
            .map(|(a, d)| a + scale * d)
            .collect();
        Self {
            env: self.env.clone(),
            logits,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn uniform_completion_dist() {
        let env = EnvSpec::new(1, 2, 2, 1, 1.0).unwrap();
        let d = TabularPolicy::uniform(&env).completion_dist(0).unwrap();
        assert!(close(d.probs(), &[0.25; 4], 1e-15));
    }

    #[test]
    fn single_token_softmax() {
        let env = EnvSpec::new(1, 2, 1, 1, 1.0).unwrap();
        let pol = TabularPolicy::from_logits(&env, vec![3f64.ln(), 0.0]).unwrap();
        assert!(close(pol.completion_dist(0).unwrap().probs(), &[0.75, 0.25], 1e-15));
    }

    #[test]
    fn saturated_block_no_overflow() {
        let env = EnvSpec::new(1, 2, 1, 1, 1.0).unwrap();
        let pol = TabularPolicy::from_logits(&env, vec![50.0, -50.0]).unwrap();
        let d = pol.completion_dist(0).unwrap();
        assert!(close(d.probs(), &[1.0, 0.0], 1e-12));
        assert!(d.probs().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn deterministic_sampling() {
        let env = EnvSpec::new(1, 2, 2, 1, 1.0).unwrap();
        // completion 3 = tokens (1, 1)
        let mut logits = vec![0.0; env.num_params()];
        logits[1] = 40.0;
        logits[2 * 2 + 1] = 40.0;
        let pol = TabularPolicy::from_logits(&env, logits).unwrap();
        assert!(pol.completion_dist(0).unwrap().probs()[3] > 1.0 - 1e-9);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(pol.sample_completion(0, &mut rng).unwrap().completion, 3);
        }
    }

    #[test]
    fn sampling_reproducible_and_logprobs_consistent() {
        let env = EnvSpec::new(2, 3, 3, 1, 1.0).unwrap();
        let logits: Vec<f64> = (0..env.num_params()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let pol = TabularPolicy::from_logits(&env, logits).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let sa = pol.sample_completion(1, &mut a).unwrap();
            let sb = pol.sample_completion(1, &mut b).unwrap();
            assert_eq!(sa, sb);
            let re = pol.token_log_probs(1, sa.completion);
            assert!(close(&sa.token_log_probs, &re, 1e-12));
        }
    }

    #[test]
    fn sampling_frequency() {
        let env = EnvSpec::new(1, 2, 1, 1, 1.0).unwrap();
        let pol = TabularPolicy::from_logits(&env, vec![3f64.ln(), 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| pol.sample_completion(0, &mut rng).unwrap().completion == 0)
            .count();
        let f = zeros as f64 / n as f64;
        assert!((0.74..=0.76).contains(&f), "{f}");
    }

    #[test]
    fn expectations() {
        let env = EnvSpec::new(1, 2, 1, 2, 1.0).unwrap();
        let pol = TabularPolicy::from_logits(&env, vec![3f64.ln(), 0.0]).unwrap();
        let r = RewardTable::new(&env, vec![1.0, 0.5, -1.0, 0.5]).unwrap();
        assert!((pol.expected_reward(&r, 0) - 0.5).abs() < 1e-15);
        assert!((pol.expected_reward(&r, 1) - 0.5).abs() < 1e-15);
        let uni = TabularPolicy::uniform(&env);
        let r = RewardTable::new(&env, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((uni.expected_reward(&r, 0) - 0.5).abs() < 1e-15);

        let env4 = EnvSpec::new(1, 4, 1, 1, 4.0).unwrap();
        let s = ScoreTable::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((TabularPolicy::uniform(&env4).value(&s) - 2.5).abs() < 1e-15);
        assert_eq!(TabularPolicy::uniform(&env4).value(&ScoreTable::constant(&env4, 0.0)), 0.0);
    }

    #[test]
    fn linear_value() {
        let env = EnvSpec::new(2, 2, 2, 2, 1.0).unwrap();
        let logits: Vec<f64> = (0..env.num_params()).map(|i| (i as f64 * 0.37).sin()).collect();
        let pol = TabularPolicy::from_logits(&env, logits).unwrap();
        let r = RewardTable::from_fn(&env, |x, y, m| ((x + 2 * y + 3 * m) as f64 * 0.3).cos()).unwrap();
        let s = r.scalarize(|row| 0.5 * row[0] + 0.5 * row[1]);
        let v = pol.value(&s);
        let e = pol.expected_rewards(&r);
        assert!((v - 0.5 * e[0] - 0.5 * e[1]).abs() < 1e-12);
    }
}
