//! Scalarization controllers: fixed linear weights, weighted Tchebycheff, Lagrangian
//! primal-dual, GradNorm, MGDA and covariance-targeted weight adaptation (CTWA).

pub mod ctwa;
pub mod gradnorm;
pub mod lagrangian;
pub mod mgda;
pub mod tchebycheff;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ctwa::{ctwa_batch_covariance, ctwa_step, CtwaState, CtwaUpdate, GroupStats};
pub use gradnorm::{gradnorm_step, GradNormState, GradNormUpdate};
pub use lagrangian::{lagrangian_step, LagrangianState};
pub use mgda::{kkt_residual, mgda_minnorm, MgdaResult};
pub use tchebycheff::{tchebycheff_score, tchebycheff_step, TchebycheffState};

/// Positive weights kept together with their logs.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    lambda: Vec<f64>,
    u: Vec<f64>,
}

impl WeightVector {
    pub fn from_weights(lambda: &[f64]) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::InvalidInput("empty weight vector".into()));
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidInput(format!("weights must be positive, got {lambda:?}")));
        }
        Ok(Self {
            lambda: lambda.to_vec(),
            u: lambda.iter().map(|l| l.ln()).collect(),
        })
    }

    pub fn from_log_weights(u: &[f64]) -> Result<Self> {
        let mut w = Self {
            lambda: vec![0.0; u.len()],
            u: u.to_vec(),
        };
        w.refresh()?;
        Ok(w)
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.u
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub(crate) fn log_weights_mut(&mut self) -> &mut [f64] {
        &mut self.u
    }

    /// λ ← exp(u).
    pub(crate) fn refresh(&mut self) -> Result<()> {
        for (l, u) in self.lambda.iter_mut().zip(&self.u) {
            *l = u.exp();
        }
        if self.lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::NonFinite("weight overflow".into()));
        }
        Ok(())
    }
}

/// Σ λ_m r_m.
pub fn linear_score(weights: &[f64], rewards_row: &[f64]) -> f64 {
    weights.iter().zip(rewards_row).map(|(w, r)| w * r).sum()
}

/// Controller selection and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "lowercase", deny_unknown_fields)]
pub enum ControllerConfig {
    Linear {
        weights: Vec<f64>,
    },
    Tchebycheff {
        weights: Vec<f64>,
    },
    Lagrangian {
        primary: usize,
        targets: Vec<f64>,
        dual_lr: f64,
    },
    Gradnorm {
        alpha: f64,
        weight_lr: f64,
    },
    Mgda,
    Ctwa {
        initial_weights: Vec<f64>,
        targets: Vec<f64>,
        ema_rate: f64,
        weight_lr: f64,
    },
}

impl ControllerConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            ControllerConfig::Linear { .. } => "linear",
            ControllerConfig::Tchebycheff { .. } => "tchebycheff",
            ControllerConfig::Lagrangian { .. } => "lagrangian",
            ControllerConfig::Gradnorm { .. } => "gradnorm",
            ControllerConfig::Mgda => "mgda",
            ControllerConfig::Ctwa { .. } => "ctwa",
        }
    }

    /// Builds fresh controller state for `num_objectives` objectives.
    pub fn build(&self, num_objectives: usize) -> Result<Controller> {
        let check_len = |name: &str, v: &[f64], want: usize| -> Result<()> {
            if v.len() != want {
                return Err(Error::Config(format!(
                    "controller {name} has {} entries, expected {want}",
                    v.len()
                )));
            }
            Ok(())
        };
        Ok(match self {
            ControllerConfig::Linear { weights } => {
                check_len("weights", weights, num_objectives)?;
                Controller::Linear(WeightVector::from_weights(weights)?)
            }
            ControllerConfig::Tchebycheff { weights } => {
                check_len("weights", weights, num_objectives)?;
                Controller::Tchebycheff(TchebycheffState::new(weights)?)
            }
            ControllerConfig::Lagrangian {
                primary,
                targets,
                dual_lr,
            } => {
                check_len("targets", targets, num_objectives.saturating_sub(1))?;
                Controller::Lagrangian(LagrangianState::new(*primary, targets, *dual_lr, num_objectives)?)
            }
            ControllerConfig::Gradnorm { alpha, weight_lr } => {
                Controller::GradNorm(GradNormState::new(num_objectives, *alpha, *weight_lr)?)
            }
            ControllerConfig::Mgda => Controller::Mgda {
                last_weights: vec![1.0 / num_objectives as f64; num_objectives],
            },
            ControllerConfig::Ctwa {
                initial_weights,
                targets,
                ema_rate,
                weight_lr,
            } => {
                check_len("initial_weights", initial_weights, num_objectives)?;
                check_len("targets", targets, num_objectives)?;
                Controller::Ctwa(CtwaState::new(initial_weights, targets, *ema_rate, *weight_lr)?)
            }
        })
    }
}

/// Mutable controller state owned by a training loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    Linear(WeightVector),
    Tchebycheff(TchebycheffState),
    Lagrangian(LagrangianState),
    GradNorm(GradNormState),
    Mgda { last_weights: Vec<f64> },
    Ctwa(CtwaState),
}

impl Controller {
    /// Per-objective weight snapshot: λ for linear/CTWA, w for Tchebycheff/GradNorm/MGDA,
    /// 1 for the primary and λ_k for constraints under the Lagrangian.
    pub fn weights(&self) -> Vec<f64> {
        match self {
            Controller::Linear(w) => w.lambda().to_vec(),
            Controller::Tchebycheff(s) => s.weights().to_vec(),
            Controller::Lagrangian(s) => s.objective_weights(),
            Controller::GradNorm(s) => s.weights().to_vec(),
            Controller::Mgda { last_weights } => last_weights.clone(),
            Controller::Ctwa(s) => s.weights.lambda().to_vec(),
        }
    }

    /// Whether the controller acts on per-objective gradients instead of scalar scores.
    pub fn is_gradient_based(&self) -> bool {
        matches!(self, Controller::GradNorm(_) | Controller::Mgda { .. })
    }
}
