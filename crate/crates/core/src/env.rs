//! Finite environments: prompt/completion index spaces, reward and score tables.
//!
//! A completion is a token sequence of fixed length `out_len` over a vocabulary of
//! `vocab_size` tokens, indexed big-endian: token 0 is the most significant digit.

use crate::error::{Error, Result};

/// Shape of a testbed instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    num_prompts: usize,
    vocab_size: usize,
    out_len: usize,
    num_objectives: usize,
    reward_bound: f64,
    num_completions: usize,
    // level_offsets[l] = number of prefixes of length < l, for l <= out_len + 1
    level_offsets: Vec<usize>,
}

impl EnvSpec {
    pub const DEFAULT_ENUMERATION_CAP: usize = 4096;

    pub fn new(
        num_prompts: usize,
        vocab_size: usize,
        out_len: usize,
        num_objectives: usize,
        reward_bound: f64,
    ) -> Result<Self> {
        Self::with_cap(
            num_prompts,
            vocab_size,
            out_len,
            num_objectives,
            reward_bound,
            Self::DEFAULT_ENUMERATION_CAP,
        )
    }

    pub fn with_cap(
        num_prompts: usize,
        vocab_size: usize,
        out_len: usize,
        num_objectives: usize,
        reward_bound: f64,
        cap: usize,
    ) -> Result<Self> {
        if num_prompts == 0 {
            return Err(Error::Config("num_prompts must be positive".into()));
        }
        if vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        if out_len == 0 {
            return Err(Error::Config("out_len must be positive".into()));
        }
        if num_objectives == 0 {
            return Err(Error::Config("num_objectives must be positive".into()));
        }
        if !(reward_bound.is_finite() && reward_bound > 0.0) {
            return Err(Error::Config(format!(
                "reward_bound must be positive and finite, got {reward_bound}"
            )));
        }
        let mut completions: u128 = 1;
        for _ in 0..out_len {
            completions = completions.saturating_mul(vocab_size as u128);
        }
        if completions > cap as u128 {
            return Err(Error::EnumerationCap { completions, cap });
        }
        let mut level_offsets = Vec::with_capacity(out_len + 2);
        let mut acc = 0usize;
        let mut width = 1usize;
        for _ in 0..out_len + 2 {
            level_offsets.push(acc);
            acc += width;
            width *= vocab_size;
        }
        Ok(Self {
            num_prompts,
            vocab_size,
            out_len,
            num_objectives,
            reward_bound,
            num_completions: completions as usize,
            level_offsets,
        })
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    pub fn num_objectives(&self) -> usize {
        self.num_objectives
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    /// |X|^L_out.
    pub fn num_completions(&self) -> usize {
        self.num_completions
    }

    /// Number of prefixes (logit blocks) per prompt: sum over l < L_out of |X|^l.
    pub fn blocks_per_prompt(&self) -> usize {
        self.level_offsets[self.out_len]
    }

    pub fn params_per_prompt(&self) -> usize {
        self.blocks_per_prompt() * self.vocab_size
    }

    pub fn num_params(&self) -> usize {
        self.num_prompts * self.params_per_prompt()
    }

    /// Number of distinct prefixes of length `level`.
    pub fn prefixes_at(&self, level: usize) -> usize {
        self.level_offsets[level + 1] - self.level_offsets[level]
    }

    /// Global block index of the prefix of length `level` with big-endian value `prefix`.
    pub fn block_index(&self, prompt: usize, level: usize, prefix: usize) -> usize {
        debug_assert!(level < self.out_len && prefix < self.prefixes_at(level));
        prompt * self.blocks_per_prompt() + self.level_offsets[level] + prefix
    }

    /// Offset of the first logit of a block in the flat parameter vector.
    pub fn block_offset(&self, block: usize) -> usize {
        block * self.vocab_size
    }

    /// First parameter index owned by `prompt`.
    pub fn prompt_offset(&self, prompt: usize) -> usize {
        prompt * self.params_per_prompt()
    }

    /// Token at position `pos` of `completion`.
    pub fn token(&self, completion: usize, pos: usize) -> usize {
        let shift = self.prefixes_at(self.out_len - 1 - pos);
        (completion / shift) % self.vocab_size
    }

    /// Value of the length-`len` prefix of `completion`.
    pub fn prefix_of(&self, completion: usize, len: usize) -> usize {
        completion / self.prefixes_at(self.out_len - len)
    }

    pub fn tokens(&self, completion: usize) -> Vec<usize> {
        (0..self.out_len).map(|l| self.token(completion, l)).collect()
    }

    pub fn completion_index(&self, tokens: &[usize]) -> usize {
        tokens.iter().fold(0, |acc, &t| acc * self.vocab_size + t)
    }

    pub fn check_prompt(&self, prompt: usize) -> Result<()> {
        if prompt >= self.num_prompts {
            return Err(Error::InvalidInput(format!(
                "prompt {prompt} out of range (num_prompts {})",
                self.num_prompts
            )));
        }
        Ok(())
    }
}

/// Per-(prompt, completion, objective) rewards bounded by B.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    num_prompts: usize,
    num_completions: usize,
    num_objectives: usize,
    bound: f64,
    values: Vec<f64>,
}

impl RewardTable {
    /// `values` is flat in [prompt][completion][objective] order.
    pub fn new(env: &EnvSpec, values: Vec<f64>) -> Result<Self> {
        let expected = env.num_prompts() * env.num_completions() * env.num_objectives();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "reward table has {} entries, env expects {expected}",
                values.len()
            )));
        }
        let bound = env.reward_bound();
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > bound)
        {
            return Err(Error::InvalidInput(format!(
                "reward entry {i} = {v} violates bound {bound}"
            )));
        }
        Ok(Self {
            num_prompts: env.num_prompts(),
            num_completions: env.num_completions(),
            num_objectives: env.num_objectives(),
            bound,
            values,
        })
    }

    pub fn from_fn(env: &EnvSpec, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut values =
            Vec::with_capacity(env.num_prompts() * env.num_completions() * env.num_objectives());
        for x in 0..env.num_prompts() {
            for y in 0..env.num_completions() {
                for m in 0..env.num_objectives() {
                    values.push(f(x, y, m));
                }
            }
        }
        Self::new(env, values)
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn num_completions(&self) -> usize {
        self.num_completions
    }

    pub fn num_objectives(&self) -> usize {
        self.num_objectives
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, prompt: usize, completion: usize, objective: usize) -> f64 {
        self.values[(prompt * self.num_completions + completion) * self.num_objectives + objective]
    }

    /// All objectives for one (prompt, completion).
    pub fn row(&self, prompt: usize, completion: usize) -> &[f64] {
        let start = (prompt * self.num_completions + completion) * self.num_objectives;
        &self.values[start..start + self.num_objectives]
    }

    /// r_m as a score table.
    pub fn objective(&self, objective: usize) -> ScoreTable {
        self.scalarize(|row| row[objective])
    }

    /// Applies `f` to every reward row.
    pub fn scalarize(&self, mut f: impl FnMut(&[f64]) -> f64) -> ScoreTable {
        let values = (0..self.num_prompts * self.num_completions)
            .map(|i| f(&self.values[i * self.num_objectives..(i + 1) * self.num_objectives]))
            .collect();
        ScoreTable {
            num_prompts: self.num_prompts,
            num_completions: self.num_completions,
            values,
        }
    }

    pub fn check_env(&self, env: &EnvSpec) -> Result<()> {
        if self.num_prompts != env.num_prompts()
            || self.num_completions != env.num_completions()
            || self.num_objectives != env.num_objectives()
        {
            return Err(Error::Shape(format!(
                "reward table shape ({}, {}, {}) does not match env ({}, {}, {})",
                self.num_prompts,
                self.num_completions,
                self.num_objectives,
                env.num_prompts(),
                env.num_completions(),
                env.num_objectives()
            )));
        }
        Ok(())
    }
}

/// Scalar score s(x, y) per (prompt, completion).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    num_prompts: usize,
    num_completions: usize,
    values: Vec<f64>,
}

impl ScoreTable {
    pub fn new(num_prompts: usize, num_completions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_prompts * num_completions {
            return Err(Error::Shape(format!(
                "score table has {} entries, expected {}",
                values.len(),
                num_prompts * num_completions
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score table entry".into()));
        }
        Ok(Self {
            num_prompts,
            num_completions,
            values,
        })
    }

    pub fn from_fn(env: &EnvSpec, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(env.num_prompts() * env.num_completions());
        for x in 0..env.num_prompts() {
            for y in 0..env.num_completions() {
                values.push(f(x, y));
            }
        }
        Self::new(env.num_prompts(), env.num_completions(), values)
    }

    pub fn constant(env: &EnvSpec, c: f64) -> Self {
        Self {
            num_prompts: env.num_prompts(),
            num_completions: env.num_completions(),
            values: vec![c; env.num_prompts() * env.num_completions()],
        }
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn num_completions(&self) -> usize {
        self.num_completions
    }

    pub fn get(&self, prompt: usize, completion: usize) -> f64 {
        self.values[prompt * self.num_completions + completion]
    }

    pub fn prompt(&self, prompt: usize) -> &[f64] {
        &self.values[prompt * self.num_completions..(prompt + 1) * self.num_completions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// max |s| over the table.
    pub fn bound(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn check_env(&self, env: &EnvSpec) -> Result<()> {
        if self.num_prompts != env.num_prompts() || self.num_completions != env.num_completions() {
            return Err(Error::Shape(format!(
                "score table shape ({}, {}) does not match env ({}, {})",
                self.num_prompts,
                self.num_completions,
                env.num_prompts(),
                env.num_completions()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count() {
        let env = EnvSpec::new(3, 2, 3, 1, 1.0).unwrap();
        assert_eq!(env.blocks_per_prompt(), 1 + 2 + 4);
        assert_eq!(env.num_params(), 3 * 7 * 2);
        assert_eq!(env.num_completions(), 8);
    }

    #[test]
    fn enumeration_cap() {
        assert!(matches!(
            EnvSpec::new(1, 5, 6, 1, 1.0),
            Err(Error::EnumerationCap { completions: 15625, cap: 4096 })
        ));
        assert!(EnvSpec::new(1, 4, 6, 1, 1.0).is_ok());
        assert!(EnvSpec::new(1, 2, 1, 0, 1.0).is_err());
        assert!(EnvSpec::new(1, 2, 0, 1, 1.0).is_err());
    }

    #[test]
    fn big_endian_tokens() {
        let env = EnvSpec::new(1, 3, 3, 1, 1.0).unwrap();
        let y = env.completion_index(&[2, 0, 1]);
        assert_eq!(y, 2 * 9 + 1);
        assert_eq!(env.tokens(y), vec![2, 0, 1]);
        assert_eq!(env.prefix_of(y, 0), 0);
        assert_eq!(env.prefix_of(y, 1), 2);
        assert_eq!(env.prefix_of(y, 2), 6);
        assert_eq!(env.block_index(0, 2, 6), 1 + 3 + 6);
    }

    #[test]
    fn reward_bound_enforced() {
        let env = EnvSpec::new(1, 2, 1, 1, 1.0).unwrap();
        assert!(RewardTable::new(&env, vec![1.0, -1.0]).is_ok());
        assert!(RewardTable::new(&env, vec![1.5, 0.0]).is_err());
        assert!(RewardTable::new(&env, vec![1.0]).is_err());
    }
}
