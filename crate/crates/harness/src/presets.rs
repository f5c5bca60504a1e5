//! Named experiments and reward-table generators.
//!
//! `desk-*` presets carry the reference controller hyperparameters on a synthetic
//! desk-scale environment; the shared learning rate is rescaled to 1e-2 for tabular runs.

use std::path::PathBuf;

use covbench_core::scalarize::ControllerConfig;
use covbench_core::train::{Algorithm, Normalization};
use covbench_core::{EnvSpec, RewardTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{
    EnvSection, ExperimentConfig, OutputFormat, OutputSection, PolicySection, RewardsSection, TrainSection,
};
use crate::error::HarnessError;

pub const INITIAL_WEIGHTS: [f64; 3] = [0.333, 0.333, 0.334];
pub const CTWA_TARGETS: [f64; 3] = [0.15, 0.08, 0.08];
pub const CTWA_EMA_RATE: f64 = 0.1;
pub const CTWA_WEIGHT_LR: f64 = 0.05;
pub const GRADNORM_ALPHA: f64 = 1.5;
pub const GRADNORM_WEIGHT_LR: f64 = 0.025;
pub const LAGRANGIAN_TARGETS: [f64; 2] = [0.9, 0.9];
pub const LAGRANGIAN_DUAL_LR: f64 = 0.01;
pub const EPS_CLIP: f64 = 0.2;
pub const GROUP_SIZE: usize = 16;
pub const BATCH_PROMPTS: usize = 32;
pub const KL_COEF: f64 = 0.001;
pub const ENTROPY_COEF: f64 = 0.0;
/// Tabulated learning rate for billion-parameter models; recorded, not used for tabular runs.
pub const REFERENCE_LEARNING_RATE: f64 = 1e-6;
pub const DESK_LEARNING_RATE: f64 = 1e-2;

/// Interference runs.
pub const INTERFERENCE_LEARNING_RATE: f64 = 0.1;
pub const INTERFERENCE_STEPS: usize = 300;
pub const INTERFERENCE_BURN_IN: usize = 100;

pub const SYNTHETIC_SEED: u64 = 20240601;

/// Reward rows for completions 00, 01, 10, 11 of the interference environment.
pub const INTERFERENCE_ROWS: [[f64; 3]; 4] = [[1.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0], [0.0, 0.0, 0.0]];

pub fn names() -> Vec<&'static str> {
    vec![
        "interference-linear",
        "interference-ctwa",
        "desk-linear",
        "desk-ctwa",
        "desk-gradnorm",
        "desk-mgda",
        "desk-tchebycheff",
        "desk-lagrangian",
    ]
}

pub fn reward_table(name: &str, env: &EnvSpec, seed: u64) -> Result<RewardTable, HarnessError> {
    match name {
        "interference" => {
            if (env.num_prompts(), env.vocab_size(), env.out_len(), env.num_objectives()) != (1, 2, 2, 3) {
                return Err(HarnessError::Config(
                    "rewards: preset \"interference\" needs num_prompts=1, vocab_size=2, out_len=2, num_objectives=3"
                        .into(),
                ));
            }
            RewardTable::from_fn(env, |_, y, m| INTERFERENCE_ROWS[y][m]).map_err(HarnessError::from)
        }
        "synthetic" => {
            // Independent fair-coin objectives per (prompt, completion).
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = env.reward_bound().min(1.0);
            RewardTable::from_fn(env, |_, _, _| if rng.gen::<bool>() { b } else { 0.0 })
                .map_err(HarnessError::from)
        }
        other => Err(HarnessError::Config(format!(
            "rewards.name: unknown reward preset \"{other}\" (expected interference or synthetic)"
        ))),
    }
}

fn interference(controller: ControllerConfig, name: &str) -> ExperimentConfig {
    let l9 = 9f64.ln();
    ExperimentConfig {
        env: EnvSection {
            num_prompts: 1,
            vocab_size: 2,
            out_len: 2,
            num_objectives: 3,
            reward_bound: 1.0,
        },
        rewards: RewardsSection::Preset {
            name: "interference".into(),
            seed: 0,
        },
        // First token uniform, second token 0.9 / 0.1 under both prefixes.
        policy: Some(PolicySection {
            logits: vec![0.0, 0.0, l9, 0.0, l9, 0.0],
        }),
        train: TrainSection {
            algorithm: Algorithm::Reinforce,
            learning_rate: INTERFERENCE_LEARNING_RATE,
            group_size: GROUP_SIZE,
            batch_prompts: 1,
            eps_clip: EPS_CLIP,
            beta_kl: 0.0,
            lambda_entropy: ENTROPY_COEF,
            steps: INTERFERENCE_STEPS,
            seed: 0,
            momentum: 0.0,
            inner_epochs: 1,
            normalization: Normalization::Sum,
        },
        controller,
        output: OutputSection {
            path: PathBuf::from(format!("{name}.csv")),
            format: OutputFormat::Csv,
            flush_every: 50,
        },
    }
}

fn desk_preset(controller: ControllerConfig, name: &str, beta_kl: f64) -> ExperimentConfig {
    ExperimentConfig {
        env: EnvSection {
            num_prompts: 8,
            vocab_size: 3,
            out_len: 2,
            num_objectives: 3,
            reward_bound: 1.0,
        },
        rewards: RewardsSection::Preset {
            name: "synthetic".into(),
            seed: SYNTHETIC_SEED,
        },
        policy: None,
        train: TrainSection {
            algorithm: Algorithm::Grpo,
            learning_rate: DESK_LEARNING_RATE,
            group_size: GROUP_SIZE,
            batch_prompts: BATCH_PROMPTS,
            eps_clip: EPS_CLIP,
            beta_kl,
            lambda_entropy: ENTROPY_COEF,
            steps: 100,
            seed: 1,
            momentum: 0.0,
            inner_epochs: 1,
            normalization: Normalization::Sum,
        },
        controller,
        output: OutputSection {
            path: PathBuf::from(format!("{name}.csv")),
            format: OutputFormat::Csv,
            flush_every: 10,
        },
    }
}

pub fn ctwa_controller() -> ControllerConfig {
    ControllerConfig::Ctwa {
        initial_weights: INITIAL_WEIGHTS.to_vec(),
        targets: CTWA_TARGETS.to_vec(),
        ema_rate: CTWA_EMA_RATE,
        weight_lr: CTWA_WEIGHT_LR,
    }
}

pub fn get(name: &str) -> Option<ExperimentConfig> {
    let linear = ControllerConfig::Linear {
        weights: INITIAL_WEIGHTS.to_vec(),
    };
    Some(match name {
        "interference-linear" => interference(linear, name),
        "interference-ctwa" => interference(ctwa_controller(), name),
        "desk-linear" => desk_preset(linear, name, KL_COEF),
        "desk-ctwa" => desk_preset(ctwa_controller(), name, KL_COEF),
        "desk-gradnorm" => desk_preset(
            ControllerConfig::Gradnorm {
                alpha: GRADNORM_ALPHA,
                weight_lr: GRADNORM_WEIGHT_LR,
            },
            name,
            KL_COEF,
        ),
        "desk-mgda" => desk_preset(ControllerConfig::Mgda, name, 0.0),
        "desk-tchebycheff" => desk_preset(
            ControllerConfig::Tchebycheff {
                weights: INITIAL_WEIGHTS.to_vec(),
            },
            name,
            KL_COEF,
        ),
        "desk-lagrangian" => desk_preset(
            ControllerConfig::Lagrangian {
                primary: 0,
                targets: LAGRANGIAN_TARGETS.to_vec(),
                dual_lr: LAGRANGIAN_DUAL_LR,
            },
            name,
            0.0,
        ),
        _ => return None,
    })
}

pub fn require(name: &str) -> Result<ExperimentConfig, HarnessError> {
    get(name).ok_or_else(|| {
        HarnessError::Config(format!("unknown preset \"{name}\"; available: {}", names().join(", ")))
    })
}
