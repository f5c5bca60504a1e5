//! Training loops: exact-gradient REINFORCE and sampled GRPO with a pluggable controller.
//!
//! All randomness comes from one ChaCha8 stream seeded with `TrainConfig::seed`.

mod config;
mod record;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{Algorithm, Normalization, TrainConfig};
pub use record::{exact_covariances, min_gradient_cosine, min_pl_constant, StepRecord};

use crate::calculus::margins::clipping_distortion;
use crate::calculus::{grpo_advantages, per_objective_gradients, policy_gradient_value, regularizer_gradient};
use crate::calculus::{GroupEstimation, GroupSample};
use crate::env::{RewardTable, ScoreTable};
use crate::error::{Error, Result};
use crate::policy::TabularPolicy;
use crate::scalarize::{
    ctwa_batch_covariance, ctwa_step, gradnorm_step, lagrangian_step, linear_score, mgda_minnorm,
    tchebycheff_score, tchebycheff_step, Controller, GroupStats,
};

/// Monte Carlo groups per prompt for the distortion diagnostic when enumeration is too large.
pub const DIAGNOSTIC_GROUPS: usize = 4096;

/// One sampled group before scoring.
struct Draw {
    prompt: usize,
    completions: Vec<usize>,
    old_token_log_probs: Vec<Vec<f64>>,
}

pub struct Trainer {
    rewards: RewardTable,
    config: TrainConfig,
    policy: TabularPolicy,
    reference: TabularPolicy,
    controller: Controller,
    velocity: Vec<f64>,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(initial: &TabularPolicy, rewards: &RewardTable, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        rewards.check_env(initial.env())?;
        let controller = config.controller.build(rewards.num_objectives())?;
        Ok(Self {
            rewards: rewards.clone(),
            config: config.clone(),
            policy: initial.clone(),
            reference: initial.clone(),
            controller,
            velocity: vec![0.0; initial.env().num_params()],
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            step: 0,
        })
    }

    pub fn policy(&self) -> &TabularPolicy {
        &self.policy
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// The controller's current scalar score over every (prompt, completion).
    pub fn score_table(&self) -> ScoreTable {
        let r = &self.rewards;
        match &self.controller {
            Controller::Tchebycheff(s) => {
                let z: Vec<f64> = match s.reference() {
                    Some(z) => z.to_vec(),
                    None => (0..r.num_objectives())
                        .map(|m| r.objective(m).values().iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                        .collect(),
                };
                r.scalarize(|row| tchebycheff_score(s.weights(), &z, row))
            }
            c => {
                let w = c.weights();
                r.scalarize(|row| linear_score(&w, row))
            }
        }
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let start = Instant::now();
        self.step += 1;
        let (distortion, covariances) = match self.config.algorithm {
            Algorithm::Reinforce => (0.0, self.reinforce_step()?),
            Algorithm::Grpo => self.grpo_step()?,
        };
        let scores = self.score_table();
        let ema = match &self.controller {
            Controller::Ctwa(s) => s.ema.clone(),
            _ => Vec::new(),
        };
        let rec = StepRecord {
            step: self.step,
            rewards: self.policy.expected_rewards(&self.rewards),
            value: self.policy.value(&scores),
            weights: self.controller.weights(),
            covariances,
            ema,
            distortion,
            min_grad_cos: min_gradient_cosine(&self.policy, &self.rewards)?,
            mu: min_pl_constant(&self.policy, &scores),
            wall_time: start.elapsed().as_secs_f64(),
        };
        let finite = rec
            .rewards
            .iter()
            .chain(&rec.weights)
            .chain(&rec.covariances)
            .chain(&rec.ema)
            .chain([rec.value, rec.distortion, rec.min_grad_cos, rec.mu].iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite(format!("step {} record: {rec:?}", self.step)));
        }
        Ok(rec)
    }

    /// θ ← θ + η v with v ← μ v + (g − R).
    fn apply(&mut self, objective_gradient: &[f64]) -> Result<()> {
        let reg = regularizer_gradient(
            &self.policy,
            &self.reference,
            self.config.beta_kl,
            self.config.lambda_entropy,
        );
        let mu = self.config.momentum;
        for ((v, g), r) in self.velocity.iter_mut().zip(objective_gradient).zip(&reg) {
            let d = g - r;
            if !d.is_finite() {
                return Err(Error::NonFinite(format!("gradient at step {}", self.step)));
            }
            *v = mu * *v + d;
        }
        let eta = self.config.learning_rate;
        for (t, v) in self.policy.logits_mut().iter_mut().zip(&self.velocity) {
            *t += eta * v;
        }
        Ok(())
    }

    /// Exact ascent on E[s]; returns the per-objective covariance diagnostic.
    fn reinforce_step(&mut self) -> Result<Vec<f64>> {
        let env = self.policy.env().clone();
        let rewards = &self.rewards;
        let bound = rewards.bound();
        let gradient = match &mut self.controller {
            Controller::GradNorm(state) => {
                let losses: Vec<f64> = self.policy.expected_rewards(rewards).iter().map(|e| bound - e).collect();
                let g = per_objective_gradients(&self.policy, rewards)?;
                Some(gradnorm_step(state, &losses, &g)?.combined)
            }
            Controller::Mgda { last_weights } => {
                let res = mgda_minnorm(&per_objective_gradients(&self.policy, rewards)?)?;
                *last_weights = res.weights;
                Some(res.combined)
            }
            Controller::Tchebycheff(state) => {
                // The exact batch is the whole table.
                let rows: Vec<&[f64]> = (0..env.num_prompts())
                    .flat_map(|x| (0..env.num_completions()).map(move |y| rewards.row(x, y)))
                    .collect();
                tchebycheff_step(state, &rows)?;
                None
            }
            Controller::Lagrangian(state) => {
                state.dual_update(&self.policy.expected_rewards(rewards))?;
                None
            }
            Controller::Linear(_) | Controller::Ctwa(_) => None,
        };
        let scores = self.score_table();
        let gradient = match gradient {
            Some(g) => g,
            None => policy_gradient_value(&self.policy, &scores)?,
        };
        self.apply(&gradient)?;
        let cov = exact_covariances(&self.policy, &self.rewards, &scores);
        if let Controller::Ctwa(state) = &mut self.controller {
            ctwa_step(state, &cov)?;
        }
        Ok(cov)
    }

    fn draw_groups(&mut self, old: &TabularPolicy) -> Result<Vec<Draw>> {
        let np = old.env().num_prompts();
        (0..self.config.batch_prompts)
            .map(|_| {
                let prompt = self.rng.gen_range(0..np);
                let mut completions = Vec::with_capacity(self.config.group_size);
                let mut old_token_log_probs = Vec::with_capacity(self.config.group_size);
                for _ in 0..self.config.group_size {
                    let s = old.sample_completion(prompt, &mut self.rng)?;
                    completions.push(s.completion);
                    old_token_log_probs.push(s.token_log_probs);
                }
                Ok(Draw {
                    prompt,
                    completions,
                    old_token_log_probs,
                })
            })
            .collect()
    }

    fn group(draw: &Draw, scores: Vec<f64>, advantages: Vec<f64>) -> GroupSample {
        GroupSample {
            prompt: draw.prompt,
            completions: draw.completions.clone(),
            scores,
            advantages,
            old_token_log_probs: draw.old_token_log_probs.clone(),
        }
    }

    fn surrogate_gradient(&self, groups: &[GroupSample]) -> Result<Vec<f64>> {
        let env = self.policy.env();
        let mut scale = 1.0 / groups.len() as f64;
        if self.config.normalization == Normalization::Mean {
            scale /= (self.config.group_size * env.out_len()) as f64;
        }
        let mut g = vec![0.0; env.num_params()];
        for grp in groups {
            grp.accumulate_surrogate_gradient(&self.policy, self.config.eps_clip, scale, &mut g)?;
        }
        Ok(g)
    }

    /// Sampled clipped-surrogate step; returns (distortion, covariances).
    fn grpo_step(&mut self) -> Result<(f64, Vec<f64>)> {
        let old = self.policy.clone();
        let draws = self.draw_groups(&old)?;
        let k = self.config.group_size;
        let m = self.rewards.num_objectives();
        let rows: Vec<Vec<Vec<f64>>> = draws
            .iter()
            .map(|d| d.completions.iter().map(|&y| self.rewards.row(d.prompt, y).to_vec()).collect())
            .collect();

        // Per-objective groups for gradient-based controllers, scalar groups otherwise.
        let mut objective_groups: Vec<Vec<GroupSample>> = Vec::new();
        let mut groups: Vec<GroupSample> = Vec::new();
        match &mut self.controller {
            Controller::GradNorm(_) | Controller::Mgda { .. } => {
                for j in 0..m {
                    objective_groups.push(
                        draws
                            .iter()
                            .zip(&rows)
                            .map(|(d, r)| {
                                let s: Vec<f64> = r.iter().map(|row| row[j]).collect();
                                let a = grpo_advantages(&s)?;
                                Ok(Self::group(d, s, a))
                            })
                            .collect::<Result<_>>()?,
                    );
                }
            }
            Controller::Lagrangian(state) => {
                let mut per_obj = vec![Vec::with_capacity(draws.len() * k); m];
                for r in &rows {
                    for (j, adv) in per_obj.iter_mut().enumerate() {
                        let s: Vec<f64> = r.iter().map(|row| row[j]).collect();
                        adv.extend(grpo_advantages(&s)?);
                    }
                }
                let combined = lagrangian_step(state, &per_obj, &old.expected_rewards(&self.rewards))?;
                let w = state.objective_weights();
                for ((d, r), a) in draws.iter().zip(&rows).zip(combined.chunks(k)) {
                    let s = r.iter().map(|row| linear_score(&w, row)).collect();
                    groups.push(Self::group(d, s, a.to_vec()));
                }
            }
            Controller::Tchebycheff(state) => {
                let flat: Vec<&[f64]> = rows.iter().flatten().map(|r| r.as_slice()).collect();
                let scores = tchebycheff_step(state, &flat)?;
                for (d, s) in draws.iter().zip(scores.chunks(k)) {
                    groups.push(Self::group(d, s.to_vec(), grpo_advantages(s)?));
                }
            }
            c @ (Controller::Linear(_) | Controller::Ctwa(_)) => {
                let w = c.weights();
                for (d, r) in draws.iter().zip(&rows) {
                    let s: Vec<f64> = r.iter().map(|row| linear_score(&w, row)).collect();
                    let a = grpo_advantages(&s)?;
                    groups.push(Self::group(d, s, a));
                }
            }
        }

        for _ in 0..self.config.inner_epochs {
            let gradient = if objective_groups.is_empty() {
                self.surrogate_gradient(&groups)?
            } else {
                let g = objective_groups
                    .iter()
                    .map(|gs| self.surrogate_gradient(gs))
                    .collect::<Result<Vec<_>>>()?;
                let bound = self.rewards.bound();
                match &mut self.controller {
                    Controller::GradNorm(state) => {
                        let losses: Vec<f64> =
                            self.policy.expected_rewards(&self.rewards).iter().map(|e| bound - e).collect();
                        gradnorm_step(state, &losses, &g)?.combined
                    }
                    Controller::Mgda { last_weights } => {
                        let res = mgda_minnorm(&g)?;
                        *last_weights = res.weights;
                        res.combined
                    }
                    _ => unreachable!("objective groups only exist for gradient-based controllers"),
                }
            };
            self.apply(&gradient)?;
        }

        let scores = self.score_table();
        let distortion = clipping_distortion(
            &self.policy,
            &old,
            &scores,
            k,
            self.config.eps_clip,
            GroupEstimation::Auto {
                max_multisets: GroupEstimation::DEFAULT_MAX_MULTISETS,
                groups: DIAGNOSTIC_GROUPS,
                seed: self.config.seed.wrapping_add(self.step as u64),
            },
        )?;

        let covariances = if groups.is_empty() {
            exact_covariances(&self.policy, &self.rewards, &scores)
        } else {
            // Completion weights under the updated policy.
            let stats = groups
                .iter()
                .zip(&rows)
                .map(|(g, r)| {
                    Ok(GroupStats {
                        rewards: r.clone(),
                        weights: g.completion_weights(&self.policy, self.config.eps_clip)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ctwa_batch_covariance(&stats, m)?
        };
        if let Controller::Ctwa(state) = &mut self.controller {
            ctwa_step(state, &covariances)?;
        }
        Ok((distortion, covariances))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<StepRecord>,
    pub policy: TabularPolicy,
    pub initial_rewards: Vec<f64>,
}

/// Runs `config.steps` steps from `initial`.
pub fn run_experiment(initial: &TabularPolicy, rewards: &RewardTable, config: &TrainConfig) -> Result<ExperimentOutput> {
    let mut trainer = Trainer::new(initial, rewards, config)?;
    let mut records = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        records.push(trainer.step()?);
    }
    Ok(ExperimentOutput {
        records,
        policy: trainer.policy,
        initial_rewards: initial.expected_rewards(rewards),
    })
}
