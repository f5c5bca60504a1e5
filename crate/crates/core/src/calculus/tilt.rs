//! Exponential tilt and the first-order covariance law.

use crate::env::{RewardTable, ScoreTable};
use crate::error::{Error, Result};
use crate::policy::{CompletionDist, TabularPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct TiltResult {
    pub tilted: CompletionDist,
    /// ln E_p[exp(η s)].
    pub log_partition: f64,
}

/// p⁺(y) ∝ p(y) exp(η s(y)), evaluated with log-sum-exp.
pub fn exponential_tilt(dist: &CompletionDist, scores: &[f64], eta: f64) -> Result<TiltResult> {
    if !eta.is_finite() {
        return Err(Error::InvalidInput(format!("eta must be finite, got {eta}")));
    }
    if scores.len() != dist.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} completions",
            scores.len(),
            dist.len()
        )));
    }
    if dist.probs().iter().all(|&p| p <= 0.0) {
        return Err(Error::InvalidInput("tilt of an all-zero distribution".into()));
    }
    if eta == 0.0 {
        let total: f64 = dist.probs().iter().sum();
        return Ok(TiltResult {
            tilted: dist.clone(),
            log_partition: total.ln(),
        });
    }
    let logw: Vec<f64> = dist
        .probs()
        .iter()
        .zip(scores)
        .map(|(&p, &s)| if p > 0.0 { p.ln() + eta * s } else { f64::NEG_INFINITY })
        .collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logw.iter().map(|w| (w - max).exp()).sum::<f64>().ln();
    let tilted = logw.iter().map(|w| (w - lse).exp()).collect();
    Ok(TiltResult {
        tilted: CompletionDist::from_unchecked(tilted),
        log_partition: lse,
    })
}

/// E[ab] − E[a]E[b] under `dist`, evaluated as E[(a − Ea)(b − Eb)].
pub fn reward_covariance(dist: &CompletionDist, a: &[f64], b: &[f64]) -> f64 {
    let ea = dist.expectation(a);
    let eb = dist.expectation(b);
    dist.probs()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(p, (x, y))| p * (x - ea) * (y - eb))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceLawCheck {
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    pub residual: Vec<f64>,
}

/// Compares r_m(p⁺) − r_m(p) with η E_x Cov(r_m, s) for every objective.
pub fn covariance_law_check(
    policy: &TabularPolicy,
    rewards: &RewardTable,
    scores: &ScoreTable,
    eta: f64,
) -> Result<CovarianceLawCheck> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidInput(format!("eta must be positive, got {eta}")));
    }
    let env = policy.env();
    rewards.check_env(env)?;
    scores.check_env(env)?;
    let m = rewards.num_objectives();
    let np = env.num_prompts() as f64;
    let mut actual = vec![0.0; m];
    let mut predicted = vec![0.0; m];
    for x in 0..env.num_prompts() {
        let dist = policy.completion_dist(x)?;
        let s = scores.prompt(x);
        let tilt = exponential_tilt(&dist, s, eta)?;
        for o in 0..m {
            let r: Vec<f64> = (0..env.num_completions()).map(|y| rewards.get(x, y, o)).collect();
            // Σ (p⁺ − p) r avoids cancellation between two nearly equal expectations
            let delta: f64 = tilt
                .tilted
                .probs()
                .iter()
                .zip(dist.probs())
                .zip(&r)
                .map(|((q, p), r)| (q - p) * r)
                .sum();
            actual[o] += delta / np;
            predicted[o] += eta * reward_covariance(&dist, &r, s) / np;
        }
    }
    let residual = actual
        .iter()
        .zip(&predicted)
        .map(|(a, p)| (a - p).abs())
        .collect();
    Ok(CovarianceLawCheck {
        actual,
        predicted,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvSpec;

    #[test]
    fn tilt_identity_at_zero() {
        let d = CompletionDist::new(vec![0.2, 0.3, 0.5]).unwrap();
        let t = exponential_tilt(&d, &[1.0, -2.0, 0.5], 0.0).unwrap();
        assert_eq!(t.tilted, d);
    }

    #[test]
    fn tilt_two_outcomes() {
        let d = CompletionDist::new(vec![0.5, 0.5]).unwrap();
        let t = exponential_tilt(&d, &[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((t.tilted.probs()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((t.tilted.probs()[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((t.tilted.probs()[0] - 0.731059).abs() < 1e-6);
        assert!((t.log_partition - ((e + 1.0) / 2.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn tilt_preserves_zero_support() {
        let d = CompletionDist::new(vec![1.0, 0.0]).unwrap();
        let t = exponential_tilt(&d, &[-3.0, 100.0], 2.0).unwrap();
        assert_eq!(t.tilted.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn tilt_rejects_zero_dist() {
        let d = CompletionDist::from_unchecked(vec![0.0, 0.0]);
        assert!(exponential_tilt(&d, &[0.0, 0.0], 1.0).is_err());
        let d = CompletionDist::new(vec![0.5, 0.5]).unwrap();
        assert!(exponential_tilt(&d, &[0.0, 0.0], f64::NAN).is_err());
    }

    #[test]
    fn covariance_examples() {
        let d = CompletionDist::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(reward_covariance(&d, &[2.0, 2.0], &[2.0, 2.0]), 0.0);
        assert!((reward_covariance(&d, &[1.0, 0.0], &[0.0, 1.0]) + 0.25).abs() < 1e-15);
        assert!((reward_covariance(&d, &[1.0, 0.0], &[1.0, 0.0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn covariance_law_two_mode() {
        let env = EnvSpec::new(1, 2, 1, 1, 1.0).unwrap();
        let pol = TabularPolicy::uniform(&env);
        let r = RewardTable::new(&env, vec![1.0, 0.0]).unwrap();
        let s = ScoreTable::new(1, 2, vec![0.0, 1.0]).unwrap();
        let c = covariance_law_check(&pol, &r, &s, 0.01).unwrap();
        assert!((c.predicted[0] + 0.0025).abs() < 1e-15);
        assert!(c.residual[0] < 1e-6);
    }

    #[test]
    fn covariance_law_constant_scores() {
        let env = EnvSpec::new(2, 3, 2, 2, 1.0).unwrap();
        let logits: Vec<f64> = (0..env.num_params()).map(|i| (i as f64).sin()).collect();
        let pol = TabularPolicy::from_logits(&env, logits).unwrap();
        let r = RewardTable::from_fn(&env, |x, y, m| ((x * 5 + y * 3 + m) as f64).cos()).unwrap();
        let s = ScoreTable::constant(&env, 0.7);
        let c = covariance_law_check(&pol, &r, &s, 0.05).unwrap();
        for o in 0..2 {
            assert!(c.actual[o].abs() < 1e-12);
            assert!(c.predicted[o].abs() < 1e-12);
        }
    }
}
