//! Experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use covbench_core::scalarize::ControllerConfig;
use covbench_core::train::{Algorithm, Normalization, TrainConfig};
use covbench_core::{EnvSpec, RewardTable, TabularPolicy};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::presets;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub rewards: RewardsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySection>,
    pub train: TrainSection,
    pub controller: ControllerConfig,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub num_prompts: usize,
    pub vocab_size: usize,
    pub out_len: usize,
    pub num_objectives: usize,
    pub reward_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum RewardsSection {
    /// values[prompt][completion][objective].
    Table { values: Vec<Vec<Vec<f64>>> },
    Preset {
        name: String,
        #[serde(default)]
        seed: u64,
    },
}

/// Initial logits in the flat parameter layout; uniform when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
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
    #[serde(default = "one")]
    pub inner_epochs: usize,
    #[serde(default)]
    pub normalization: Normalization,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: PathBuf,
    pub format: OutputFormat,
    #[serde(default = "one")]
    pub flush_every: usize,
}

/// Everything needed to start a run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub env: EnvSpec,
    pub rewards: RewardTable,
    pub policy: TabularPolicy,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let de = toml::Deserializer::parse(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            HarnessError::Config(format!("{path}: {}", e.into_inner().message()))
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            algorithm: t.algorithm,
            learning_rate: t.learning_rate,
            group_size: t.group_size,
            batch_prompts: t.batch_prompts,
            eps_clip: t.eps_clip,
            beta_kl: t.beta_kl,
            lambda_entropy: t.lambda_entropy,
            steps: t.steps,
            seed: t.seed,
            momentum: t.momentum,
            inner_epochs: t.inner_epochs,
            normalization: t.normalization,
            controller: self.controller.clone(),
        }
    }

    /// Builds the environment, reward table, initial policy and training config.
    pub fn resolve(&self) -> Result<Resolved, HarnessError> {
        let e = &self.env;
        let env = EnvSpec::new(e.num_prompts, e.vocab_size, e.out_len, e.num_objectives, e.reward_bound)
            .map_err(|err| HarnessError::Config(format!("env: {err}")))?;
        let rewards = match &self.rewards {
            RewardsSection::Table { values } => table_rewards(&env, values)?,
            RewardsSection::Preset { name, seed } => presets::reward_table(name, &env, *seed)?,
        };
        let policy = match &self.policy {
            None => TabularPolicy::uniform(&env),
            Some(p) => TabularPolicy::from_logits(&env, p.logits.clone())
                .map_err(|err| HarnessError::Config(format!("policy.logits: {err}")))?,
        };
        let train = self.train_config();
        train
            .validate()
            .map_err(|err| HarnessError::Config(format!("train: {err}")))?;
        train
            .controller
            .build(env.num_objectives())
            .map_err(|err| HarnessError::Config(format!("controller: {err}")))?;
        Ok(Resolved {
            env,
            rewards,
            policy,
            train,
        })
    }
}

fn table_rewards(env: &EnvSpec, values: &[Vec<Vec<f64>>]) -> Result<RewardTable, HarnessError> {
    let shape_err = |what: String| HarnessError::Config(format!("rewards.values: {what}"));
    if values.len() != env.num_prompts() {
        return Err(shape_err(format!("{} prompts, expected {}", values.len(), env.num_prompts())));
    }
    let mut flat = Vec::with_capacity(env.num_prompts() * env.num_completions() * env.num_objectives());
    for (x, p) in values.iter().enumerate() {
        if p.len() != env.num_completions() {
            return Err(shape_err(format!(
                "prompt {x} has {} completions, expected {}",
                p.len(),
                env.num_completions()
            )));
        }
        for (y, row) in p.iter().enumerate() {
            if row.len() != env.num_objectives() {
                return Err(shape_err(format!(
                    "[{x}][{y}] has {} objectives, expected {}",
                    row.len(),
                    env.num_objectives()
                )));
            }
            flat.extend_from_slice(row);
        }
    }
    RewardTable::new(env, flat).map_err(|e| shape_err(e.to_string()))
}
