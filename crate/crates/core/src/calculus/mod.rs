//! Exact evaluation of tilts, covariances, policy gradients, Fisher matrices,
//! natural gradients, clipped GRPO weights, margins and the PL constant.

pub mod fisher;
pub mod gradient;
pub mod grpo;
pub mod margins;
pub mod pl;
pub mod tilt;

pub use fisher::{
    fisher_aggregated, fisher_aggregated_monte_carlo, fisher_aggregated_under, fisher_categorical,
    natural_gradient_flat, natural_gradient_general, NaturalGradient, PseudoInverse,
    FISHER_DIM_CAP, PINV_REL_THRESHOLD,
};
pub use gradient::{
    entropy, entropy_gradient, gradient_cosines, kl_divergence, kl_gradient,
    per_objective_gradients, policy_gradient_value, prompt_value_gradient, regularizer_gradient,
    CosineMatrix,
};
pub use grpo::{
    clip_indicator, clip_state, completion_weight, expected_group_gradients, grpo_advantages,
    ClipState, GroupEstimation, GroupGradients, GroupSample, STD_FLOOR,
};
pub use margins::{margins_and_distortion, MarginQuery, MarginReport};
pub use pl::{pl_report, pl_report_with_bound, trajectory_bound, PLReport};
pub use tilt::{covariance_law_check, exponential_tilt, reward_covariance, CovarianceLawCheck, TiltResult};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
