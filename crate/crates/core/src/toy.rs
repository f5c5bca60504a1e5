//! Closed-form two-mode analyzer: one good and one bad completion.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoModeConfig {
    /// Initial probability of the bad mode.
    pub p0: f64,
    pub s_good: f64,
    pub s_bad: f64,
    pub r_good: f64,
    pub r_bad: f64,
    pub eta: f64,
    pub steps: usize,
}

impl TwoModeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(Error::Config(format!("p0 must lie in (0, 1), got {}", self.p0)));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::Config(format!("eta must be nonnegative, got {}", self.eta)));
        }
        let vals = [self.s_good, self.s_bad, self.r_good, self.r_bad, self.eta];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("two-mode parameters must be finite".into()));
        }
        Ok(())
    }

    /// Score preferring the bad mode while the reward prefers the good one.
    pub fn demo() -> Self {
        Self {
            p0: 0.5,
            s_good: 0.0,
            s_bad: 1.0,
            r_good: 1.0,
            r_bad: 0.0,
            eta: 0.1,
            steps: 200,
        }
    }
}

/// One step of p ↦ p e^{η s_bad} / (p e^{η s_bad} + (1−p) e^{η s_good}).
pub fn log_odds_step(p: f64, s_good: f64, s_bad: f64, eta: f64) -> f64 {
    // Written as a logistic of the shifted log-odds for stability near 0 and 1.
    let z = (p.ln() - (1.0 - p).ln()) + eta * (s_bad - s_good);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// p_0, p_1, …, p_steps.
pub fn log_odds_trajectory(cfg: &TwoModeConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.steps + 1);
    let mut p = cfg.p0;
    out.push(p);
    for _ in 0..cfg.steps {
        p = log_odds_step(p, cfg.s_good, cfg.s_bad, cfg.eta);
        out.push(p);
    }
    Ok(out)
}

pub fn expected_objective(cfg: &TwoModeConfig, p: f64) -> f64 {
    cfg.r_good - p * (cfg.r_good - cfg.r_bad)
}

pub fn closed_form_covariance(cfg: &TwoModeConfig, p: f64) -> f64 {
    p * (1.0 - p) * (cfg.r_good - cfg.r_bad) * (cfg.s_good - cfg.s_bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_example() {
        let cfg = TwoModeConfig {
            eta: 1.0,
            steps: 1,
            ..TwoModeConfig::demo()
        };
        let t = log_odds_trajectory(&cfg).unwrap();
        let e = std::f64::consts::E;
        assert!((t[1] - e / (e + 1.0)).abs() < 1e-15);
        assert!((t[1] - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn equal_scores_constant() {
        let cfg = TwoModeConfig {
            s_bad: 0.0,
            p0: 0.3,
            ..TwoModeConfig::demo()
        };
        assert!(log_odds_trajectory(&cfg).unwrap().iter().all(|p| (p - 0.3).abs() < 1e-15));
    }

    #[test]
    fn monotone_drift() {
        let cfg = TwoModeConfig {
            steps: 1000,
            ..TwoModeConfig::demo()
        };
        let t = log_odds_trajectory(&cfg).unwrap();
        assert!(t.windows(2).all(|w| w[1] >= w[0]));
        assert!(t[1000] > 0.9999);
        let r: Vec<f64> = t[..201].iter().map(|p| expected_objective(&cfg, *p)).collect();
        assert!(r.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn objective_and_covariance_examples() {
        let cfg = TwoModeConfig::demo();
        assert_eq!(expected_objective(&cfg, 0.0), 1.0);
        assert_eq!(expected_objective(&cfg, 1.0), 0.0);
        assert_eq!(expected_objective(&cfg, 0.25), 0.75);
        assert_eq!(closed_form_covariance(&cfg, 0.5), -0.25);
        assert_eq!(closed_form_covariance(&cfg, 0.0), 0.0);
        assert_eq!(closed_form_covariance(&cfg, 1.0), 0.0);
    }

    #[test]
    fn bad_p0_rejected() {
        let cfg = TwoModeConfig {
            p0: 1.0,
            ..TwoModeConfig::demo()
        };
        assert!(log_odds_trajectory(&cfg).is_err());
    }
}
