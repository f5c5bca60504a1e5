use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalarize::ControllerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Exact-gradient ascent on E[s].
    Reinforce,
    /// Sampled groups with the clipped surrogate.
    Grpo,
}

/// How the surrogate sums over group members and tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Σ_k Σ_l, no 1/K or 1/L.
    #[default]
    Sum,
    /// Divides by K·L.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub group_size: usize,
    pub batch_prompts: usize,
    pub eps_clip: f64,
    pub beta_kl: f64,
    pub lambda_entropy: f64,
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_inner_epochs")]
    pub inner_epochs: usize,
    #[serde(default)]
    pub normalization: Normalization,
    pub controller: ControllerConfig,
}

fn default_inner_epochs() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return bad(format!("beta_kl must be >= 0, got {}", self.beta_kl));
        }
        if !(self.lambda_entropy >= 0.0 && self.lambda_entropy.is_finite()) {
            return bad(format!("lambda_entropy must be >= 0, got {}", self.lambda_entropy));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.inner_epochs == 0 {
            return bad("inner_epochs must be >= 1".into());
        }
        if self.algorithm == Algorithm::Grpo {
            if self.group_size < 2 {
                return bad(format!("grpo requires group_size >= 2, got {}", self.group_size));
            }
            if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
                return bad(format!("eps_clip must lie in (0, 1), got {}", self.eps_clip));
            }
            if self.batch_prompts == 0 {
                return bad("batch_prompts must be >= 1".into());
            }
        }
        Ok(())
    }
}
