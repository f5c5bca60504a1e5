//! Command-line harness: configs, presets, output sinks and verification suites.

pub mod config;
pub mod error;
pub mod output;
pub mod presets;
pub mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};

use covbench_core::calculus::covariance_law_check;
use covbench_core::oracle::{order_check_at, OrderCheckResult};
use covbench_core::toy::{closed_form_covariance, expected_objective, log_odds_trajectory, TwoModeConfig};
use covbench_core::train::{StepRecord, Trainer};

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::output::{format_float, RecordSink};

/// Relative output paths are resolved against this directory when it is set.
pub const OUTPUT_DIR_ENV: &str = "COVBENCH_OUTPUT_DIR";

pub fn resolve_output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if path.is_relative() && !dir.is_empty() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// `<output>.abort.txt`.
pub fn abort_dump_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".abort.txt");
    PathBuf::from(name)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: Vec<StepRecord>,
    pub initial_rewards: Vec<f64>,
    pub output: PathBuf,
}

/// Runs the experiment and streams one record per step to the configured sink.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    let resolved = cfg.resolve()?;
    let output = resolve_output_path(&cfg.output.path);
    let m = resolved.env.num_objectives();
    let mut trainer = Trainer::new(&resolved.policy, &resolved.rewards, &resolved.train)
        .map_err(HarnessError::from)?;
    let mut sink = RecordSink::create(&output, cfg.output.format, m, cfg.output.flush_every)?;
    let mut records = Vec::with_capacity(resolved.train.steps);
    for _ in 0..resolved.train.steps {
        match trainer.step() {
            Ok(rec) => {
                sink.write(&rec)?;
                records.push(rec);
            }
            Err(e) => {
                sink.flush()?;
                let dump = abort_dump_path(&output);
                write_abort_dump(&dump, &e.to_string(), &trainer, records.last())?;
                return Err(HarnessError::Numerical {
                    message: format!("step {}: {e}", trainer.steps_done()),
                    dump,
                });
            }
        }
    }
    sink.finish()?;
    Ok(RunSummary {
        records,
        initial_rewards: resolved.policy.expected_rewards(&resolved.rewards),
        output,
    })
}

fn write_abort_dump(path: &Path, message: &str, trainer: &Trainer, last: Option<&StepRecord>) -> Result<(), HarnessError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "error: {message}")?;
    writeln!(f, "step: {}", trainer.steps_done())?;
    writeln!(f, "controller weights: {:?}", trainer.controller().weights())?;
    match last {
        Some(r) => writeln!(f, "last record: {r:?}")?,
        None => writeln!(f, "last record: none")?,
    }
    let logits: Vec<String> = trainer.policy().logits().iter().map(|v| format_float(*v)).collect();
    writeln!(f, "logits: [{}]", logits.join(", "))?;
    Ok(())
}

/// Trailing moving average of each column of `rows` over `window` rows.
pub fn trailing_mean(rows: &[Vec<f64>], window: usize) -> Vec<f64> {
    let w = window.max(1).min(rows.len());
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut out = vec![0.0; first.len()];
    for r in &rows[rows.len() - w..] {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v / w as f64;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    /// One order check per objective.
    pub objectives: Vec<OrderCheckResult>,
}

impl SweepReport {
    pub fn pass(&self) -> bool {
        self.objectives.iter().all(|r| r.pass)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("objective,eta,residual,ratio\n");
        for (m, r) in self.objectives.iter().enumerate() {
            for (i, (eta, res)) in r.etas.iter().zip(&r.residuals).enumerate() {
                let ratio = match i.checked_sub(1).and_then(|j| r.ratios[j]) {
                    Some(v) => format_float(v),
                    None => String::new(),
                };
                s.push_str(&format!("{m},{},{},{ratio}\n", format_float(*eta), format_float(*res)));
            }
        }
        for (m, r) in self.objectives.iter().enumerate() {
            let verdict = match (r.pass, r.degenerate) {
                (_, true) => "pass (degenerate: residuals below floor)",
                (true, false) => "pass",
                (false, false) => "FAIL",
            };
            s.push_str(&format!("# objective {m}: {verdict}\n"));
        }
        s
    }
}

pub fn validate_etas(etas: &[f64]) -> Result<(), HarnessError> {
    if etas.len() < 3 {
        return Err(HarnessError::Config(format!("need at least 3 step sizes, got {}", etas.len())));
    }
    if etas.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(HarnessError::Config(format!("step sizes must be positive, got {etas:?}")));
    }
    if etas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(HarnessError::Config(format!("step sizes must be strictly decreasing, got {etas:?}")));
    }
    Ok(())
}

/// Covariance-law residual order check at the initial policy under the controller's score.
pub fn sweep(cfg: &ExperimentConfig, etas: &[f64]) -> Result<SweepReport, HarnessError> {
    validate_etas(etas)?;
    let resolved = cfg.resolve()?;
    let trainer = Trainer::new(&resolved.policy, &resolved.rewards, &resolved.train)
        .map_err(HarnessError::from)?;
    let scores = trainer.score_table();
    let m = resolved.env.num_objectives();
    let mut residuals = vec![Vec::with_capacity(etas.len()); m];
    for &eta in etas {
        let c = covariance_law_check(&resolved.policy, &resolved.rewards, &scores, eta)
            .map_err(HarnessError::from)?;
        for (col, r) in residuals.iter_mut().zip(c.residual) {
            col.push(r);
        }
    }
    let objectives = residuals
        .into_iter()
        .map(|r| order_check_at(etas, r).map_err(HarnessError::from))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport { objectives })
}

/// Two-mode trajectory as CSV: t, p_t, expected_r, covariance.
pub fn write_toy_csv<W: Write>(cfg: &TwoModeConfig, out: W) -> Result<(), HarnessError> {
    let traj = log_odds_trajectory(cfg).map_err(HarnessError::from)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "p_t", "expected_r", "covariance"])?;
    for (t, p) in traj.iter().enumerate() {
        w.write_record([
            t.to_string(),
            format_float(*p),
            format_float(expected_objective(cfg, *p)),
            format_float(closed_form_covariance(cfg, *p)),
        ])?;
    }
    w.flush()?;
    Ok(())
}
