//! Oracle-backed verification suites.

use std::fmt;
use std::time::{Duration, Instant};

use covbench_core::calculus::*;
use covbench_core::oracle::*;
use covbench_core::scalarize::{
    ctwa_step, gradnorm_step, kkt_residual, lagrangian_step, linear_score, mgda_minnorm, tchebycheff_score,
    CtwaState, GradNormState, LagrangianState,
};
use covbench_core::toy::{closed_form_covariance, expected_objective, log_odds_step, log_odds_trajectory, TwoModeConfig};
use covbench_core::train::{run_experiment, ExperimentOutput};
use covbench_core::{CompletionDist, EnvSpec, RewardTable, ScoreTable, TabularPolicy};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::HarnessError;
use crate::presets;

pub const SUITES: [&str; 10] = [
    "tilt",
    "covariance-law",
    "toy",
    "fisher",
    "clipping",
    "pl",
    "gradients",
    "mgda",
    "controllers",
    "interference",
];

/// Deliberate mutations used as negative controls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// Flips the sign of the closed-form two-mode covariance.
    pub toy_covariance_sign: bool,
}

impl Faults {
    pub fn parse(name: &str) -> Result<Self, HarnessError> {
        match name {
            "toy-covariance-sign" => Ok(Self {
                toy_covariance_sign: true,
            }),
            other => Err(HarnessError::Config(format!("unknown fault \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    pub pass: bool,
    pub notes: Vec<String>,
    pub elapsed: Duration,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<15} {}/{} checks ({:.2} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.passed,
            self.total,
            self.elapsed.as_secs_f64()
        )?;
        for n in &self.notes {
            write!(f, "\n     {n}")?;
        }
        Ok(())
    }
}

/// Tally of individual checks within one suite.
#[derive(Default)]
struct Tally {
    passed: usize,
    total: usize,
    notes: Vec<String>,
    failures: usize,
}

impl Tally {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else {
            self.failures += 1;
            // Keep the report short.
            if self.failures <= 5 {
                self.notes.push(format!("failed: {}", what()));
            }
        }
    }

    fn note(&mut self, n: String) {
        self.notes.push(n);
    }

    fn into_report(self, name: &'static str, pass: bool, elapsed: Duration) -> SuiteReport {
        SuiteReport {
            name,
            passed: self.passed,
            total: self.total,
            pass,
            notes: self.notes,
            elapsed,
        }
    }
}

/// Expands a selector list; empty or "all" selects every suite.
pub fn select(selectors: &[String]) -> Result<Vec<&'static str>, HarnessError> {
    if selectors.is_empty() || selectors.iter().any(|s| s == "all") {
        return Ok(SUITES.to_vec());
    }
    let mut out = Vec::new();
    for s in selectors {
        let name = SUITES
            .iter()
            .find(|n| **n == s.as_str())
            .ok_or_else(|| HarnessError::Config(format!("unknown suite \"{s}\"; available: all, {}", SUITES.join(", "))))?;
        if !out.contains(name) {
            out.push(*name);
        }
    }
    Ok(out)
}

pub fn run_suite(name: &str, faults: Faults) -> Result<SuiteReport, HarnessError> {
    let start = Instant::now();
    let (name, tally, pass): (&'static str, Tally, Option<bool>) = match name {
        "tilt" => ("tilt", tilt(), None),
        "covariance-law" => {
            let (t, p) = covariance_law();
            ("covariance-law", t, Some(p))
        }
        "toy" => ("toy", toy(faults), None),
        "fisher" => ("fisher", fisher(), None),
        "clipping" => ("clipping", clipping(), None),
        "pl" => ("pl", pl(), None),
        "gradients" => ("gradients", gradients(), None),
        "mgda" => ("mgda", mgda(), None),
        "controllers" => ("controllers", controllers(), None),
        "interference" => ("interference", interference()?, None),
        other => return Err(HarnessError::Config(format!("unknown suite \"{other}\""))),
    };
    let pass = pass.unwrap_or(tally.passed == tally.total);
    Ok(tally.into_report(name, pass, start.elapsed()))
}

/// Runs independent suites on separate threads; reports come back in selection order.
pub fn run_suites(names: &[&str], faults: Faults) -> Result<Vec<SuiteReport>, HarnessError> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = names
            .iter()
            .map(|n| scope.spawn(move || run_suite(n, faults)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(HarnessError::Verify("suite panicked".into()))))
            .collect()
    })
}

/// Random tabular instance: logits in [−scale, scale], rewards in [−1, 1], positive linear score.
pub struct Instance {
    pub env: EnvSpec,
    pub policy: TabularPolicy,
    pub rewards: RewardTable,
    pub scores: ScoreTable,
}

pub fn random_instance(seed: u64, scale: f64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompts = rng.gen_range(1..=2);
    let vocab = rng.gen_range(2..=3);
    let len = rng.gen_range(1..=2);
    let m = rng.gen_range(1..=3);
    let env = EnvSpec::new(prompts, vocab, len, m, 1.0).expect("small env");
    let logits = (0..env.num_params()).map(|_| rng.gen_range(-scale..=scale)).collect();
    let policy = TabularPolicy::from_logits(&env, logits).expect("finite logits");
    let rewards = RewardTable::from_fn(&env, |_, _, _| rng.gen_range(-1.0..=1.0)).expect("bounded rewards");
    let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
    let scores = rewards.scalarize(|row| linear_score(&w, row));
    Instance {
        env,
        policy,
        rewards,
        scores,
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let t: f64 = w.iter().sum();
    w.iter().map(|v| v / t).collect()
}

/// max |a − b| ≤ rel · max(|a|, |b|, 1e-12).
fn rel_close(a: &[f64], b: &[f64], rel: f64) -> bool {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rel * scale)
}

fn tilt() -> Tally {
    let mut t = Tally::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for i in 0..50 {
        let n = rng.gen_range(2..=4);
        let p = random_simplex(&mut rng, n);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eta = rng.gen_range(0.1..3.0);
        let ok = (|| -> covbench_core::Result<(f64, f64)> {
            let tilt = exponential_tilt(&CompletionDist::new(p.clone())?, &s, eta)?;
            let best = grid_maximize_kl_objective(&p, &s, eta, 0.02)?;
            Ok((kl_objective(tilt.tilted.probs(), &p, &s, eta), best.value))
        })();
        match ok {
            Ok((v, best)) => t.check(v >= best - 1e-9, || format!("instance {i}: tilt {v} < grid {best}")),
            Err(e) => t.check(false, || format!("instance {i}: {e}")),
        }
    }
    t
}

fn covariance_law() -> (Tally, bool) {
    let mut t = Tally::default();
    let mut degenerate = 0;
    for seed in 0..20 {
        let inst = random_instance(seed, 1.5);
        for m in 0..inst.env.num_objectives() {
            let r = order_check(
                |eta| {
                    covariance_law_check(&inst.policy, &inst.rewards, &inst.scores, eta)
                        .map(|c| c.residual[m])
                        .unwrap_or(f64::NAN)
                },
                1e-2,
                3,
            );
            match r {
                Ok(r) if r.degenerate => degenerate += 1,
                Ok(r) => t.check(r.pass, || format!("instance {seed} objective {m}: ratios {:?}", r.ratios)),
                Err(e) => t.check(false, || format!("instance {seed}: {e}")),
            }
        }
    }
    t.note(format!(
        "20 instances, {} non-degenerate objective checks, {degenerate} degenerate",
        t.total
    ));
    let pass = t.total > 0 && t.passed as f64 >= 0.95 * t.total as f64;
    (t, pass)
}

fn toy(faults: Faults) -> Tally {
    let mut t = Tally::default();
    let cov = |cfg: &TwoModeConfig, p: f64| {
        let c = closed_form_covariance(cfg, p);
        if faults.toy_covariance_sign {
            -c
        } else {
            c
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for i in 0..100 {
        let cfg = TwoModeConfig {
            p0: rng.gen_range(0.01..0.99),
            s_good: rng.gen_range(-1.0..1.0),
            s_bad: rng.gen_range(-1.0..1.0),
            r_good: rng.gen_range(-1.0..1.0),
            r_bad: rng.gen_range(-1.0..1.0),
            eta: rng.gen_range(0.0..2.0),
            steps: 1,
        };
        // Completion 0 is the bad mode.
        let probs = [cfg.p0, 1.0 - cfg.p0];
        let (r, s) = ([cfg.r_bad, cfg.r_good], [cfg.s_bad, cfg.s_good]);
        let tilted = CompletionDist::new(probs.to_vec())
            .and_then(|d| exponential_tilt(&d, &s, cfg.eta))
            .map(|x| x.tilted.probs()[0]);
        let p1 = log_odds_step(cfg.p0, cfg.s_good, cfg.s_bad, cfg.eta);
        match tilted {
            Ok(q) => t.check((q - p1).abs() <= 1e-12, || format!("config {i}: one-step map {p1} vs tilt {q}")),
            Err(e) => t.check(false, || format!("config {i}: {e}")),
        }
        let brute = brute_force_covariance(&probs, &r, &s);
        let c = cov(&cfg, cfg.p0);
        t.check((c - brute).abs() <= 1e-12, || format!("config {i}: covariance {c} vs brute force {brute}"));
    }

    let demo = TwoModeConfig::demo();
    match log_odds_trajectory(&demo) {
        Ok(traj) => {
            let obj: Vec<f64> = traj.iter().map(|p| expected_objective(&demo, *p)).collect();
            let decreasing = obj.windows(2).all(|w| w[1] < w[0]);
            t.check(decreasing && obj.len() == 201, || "expected objective not strictly decreasing over 200 steps".into());
            let negative = traj.iter().all(|p| cov(&demo, *p) < 0.0);
            t.check(negative, || "covariance not negative along the demo trajectory".into());
        }
        Err(e) => t.check(false, || format!("demo: {e}")),
    }
    let one = TwoModeConfig {
        eta: 1.0,
        steps: 1,
        ..TwoModeConfig::demo()
    };
    let p1 = log_odds_step(one.p0, one.s_good, one.s_bad, one.eta);
    let e = std::f64::consts::E;
    t.check((p1 - e / (1.0 + e)).abs() <= 1e-12, || format!("p_1 = {p1}"));
    t
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn fisher() -> Tally {
    let mut t = Tally::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for i in 0..20 {
        let n = rng.gen_range(2..=6);
        let p = random_simplex(&mut rng, n);
        let dist = CompletionDist::new(p.clone()).expect("simplex");
        let f = fisher_categorical(&dist);
        let pv = DVector::from_vec(p.clone());
        let expected = DMatrix::from_diagonal(&pv) - &pv * pv.transpose();
        let err = (&f - expected).abs().max();
        t.check(err <= 1e-12, || format!("draw {i}: |F - (diag p - pp^T)| = {err:e}"));

        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let logits: Vec<f64> = p.iter().map(|v| v.ln()).collect();
        let fd = finite_diff_gradient(|z| softmax(z).iter().zip(&w).map(|(a, b)| a * b).sum(), &logits, 1e-5);
        match (natural_gradient_flat(&dist, &w), fd) {
            (Ok(dn), Ok(fd)) => {
                let fdn = &f * DVector::from_vec(dn.clone());
                let err = fdn.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                t.check(err <= 1e-9, || format!("draw {i}: |F d_nat - grad| = {err:e}"));

                let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let cov = brute_force_covariance(&p, &r, &w);
                let res = order_check(
                    |eta| {
                        let z: Vec<f64> = logits.iter().zip(&dn).map(|(a, b)| a + eta * b).collect();
                        let moved: f64 = softmax(&z).iter().zip(&p).zip(&r).map(|((a, q), rr)| (a - q) * rr).sum();
                        moved - eta * cov
                    },
                    1e-2,
                    3,
                );
                match res {
                    Ok(res) => t.check(res.pass, || format!("draw {i}: natural-step ratios {:?}", res.ratios)),
                    Err(e) => t.check(false, || format!("draw {i}: {e}")),
                }
            }
            (Err(e), _) => t.check(false, || format!("draw {i}: {e}")),
            (_, Err(e)) => t.check(false, || format!("draw {i}: {e}")),
        }
    }
    t
}

fn clipping() -> Tally {
    let mut t = Tally::default();
    for seed in 0..50 {
        let inst = random_instance(1000 + seed, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let moved: Vec<f64> = inst.policy.logits().iter().map(|v| v + rng.gen_range(-0.6..0.6)).collect();
        let new = TabularPolicy::from_logits(&inst.env, moved).expect("finite logits");
        let q = MarginQuery {
            policy: &new,
            old_policy: &inst.policy,
            reference: None,
            rewards: &inst.rewards,
            scores: &inst.scores,
            group_size: 3,
            eps_clip: 0.2,
            beta_kl: 0.001,
            lambda_entropy: 0.0,
            estimation: GroupEstimation::default(),
        };
        match margins_and_distortion(&q) {
            Ok(rep) => {
                for m in 0..rep.gamma.len() {
                    let lower = rep.gamma_unclip[m] - rep.fisher_grad_norm[m] * rep.distortion;
                    t.check(rep.gamma[m] >= lower - 1e-9, || {
                        format!("pair {seed} objective {m}: gamma_clip {} < {lower}", rep.gamma[m])
                    });
                }
            }
            Err(e) => t.check(false, || format!("pair {seed}: {e}")),
        }
        let at_old = MarginQuery {
            policy: &inst.policy,
            ..q
        };
        match margins_and_distortion(&at_old) {
            Ok(rep) => t.check(rep.distortion == 0.0, || format!("pair {seed}: distortion at old policy {}", rep.distortion)),
            Err(e) => t.check(false, || format!("pair {seed}: {e}")),
        }
    }
    t
}

fn pl() -> Tally {
    let mut t = Tally::default();
    let env = EnvSpec::new(1, 2, 2, 3, 1.0).expect("interference env");
    let rewards = presets::reward_table("interference", &env, 0).expect("interference rewards");
    let scores = rewards.scalarize(|row| linear_score(&presets::INITIAL_WEIGHTS, row));
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let draws = 200;
    let (mut positive, mut applicable, mut held) = (0, 0, 0);
    for i in 0..draws {
        let logits = (0..env.num_params()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let pol = TabularPolicy::from_logits(&env, logits).expect("finite logits");
        let rep = match pl_report(&pol, &scores, 0) {
            Ok(r) => r,
            Err(e) => {
                t.check(false, || format!("draw {i}: {e}"));
                continue;
            }
        };
        t.check(rep.value_gap <= rep.value_gap_bound + 1e-12, || {
            format!("draw {i}: value gap {} > {}", rep.value_gap, rep.value_gap_bound)
        });
        if rep.mu > 0.0 {
            positive += 1;
            if rep.assumptions_hold() {
                applicable += 1;
                let ok = rep.lhs >= rep.rhs - 1e-9;
                held += ok as usize;
                t.check(ok, || format!("draw {i}: PL inequality {} < {}", rep.lhs, rep.rhs));
            }
        }
        for y in 0..env.num_completions() {
            let (lhs, rhs) = trajectory_bound(&pol, 0, y);
            t.check(lhs >= rhs - 1e-12, || format!("draw {i} completion {y}: trajectory {lhs} < {rhs}"));
        }
    }
    t.note(format!("mu > 0 on {positive}/{draws} draws ({:.3})", positive as f64 / draws as f64));
    t.note(format!("PL inequality held on {held}/{applicable} applicable draws"));
    t
}

fn gradients() -> Tally {
    let mut t = Tally::default();
    for seed in 0..20 {
        let inst = random_instance(2000 + seed, 2.0);
        let env = &inst.env;
        let at = |th: &[f64]| TabularPolicy::from_logits(env, th.to_vec()).expect("finite logits");
        let theta = inst.policy.logits();

        let fd = finite_diff_gradient(|th| at(th).value(&inst.scores), theta, 1e-5);
        match (policy_gradient_value(&inst.policy, &inst.scores), fd) {
            (Ok(g), Ok(fd)) => t.check(rel_close(&g, &fd, 1e-6), || format!("instance {seed}: value gradient")),
            _ => t.check(false, || format!("instance {seed}: value gradient errored")),
        }

        let reference = at(&(0..env.num_params())
            .map(|i| (i as f64 * 0.77 + seed as f64).sin())
            .collect::<Vec<_>>());
        let g = kl_gradient(&inst.policy, &reference);
        match finite_diff_gradient(|th| kl_divergence(&at(th), &reference), theta, 1e-5) {
            Ok(fd) => t.check(rel_close(&g, &fd, 1e-6), || format!("instance {seed}: KL gradient")),
            Err(e) => t.check(false, || format!("instance {seed}: {e}")),
        }

        let g = entropy_gradient(&inst.policy);
        match finite_diff_gradient(|th| entropy(&at(th)), theta, 1e-5) {
            Ok(fd) => t.check(rel_close(&g, &fd, 1e-6), || format!("instance {seed}: entropy gradient")),
            Err(e) => t.check(false, || format!("instance {seed}: {e}")),
        }
    }
    t
}

fn mgda() -> Tally {
    let mut t = Tally::default();
    match mgda_minnorm(&[vec![1.0, 0.0], vec![0.0, 1.0]]) {
        Ok(r) => t.check(
            (r.weights[0] - 0.5).abs() <= 1e-12 && (r.weights[1] - 0.5).abs() <= 1e-12,
            || format!("orthogonal weights {:?}", r.weights),
        ),
        Err(e) => t.check(false, || format!("orthogonal: {e}")),
    }
    match mgda_minnorm(&[vec![1.0, 2.0, -0.5], vec![-1.0, -2.0, 0.5]]) {
        Ok(r) => {
            let n = r.combined.iter().map(|v| v * v).sum::<f64>().sqrt();
            t.check(n <= 1e-10, || format!("antipodal combined norm {n:e}"));
        }
        Err(e) => t.check(false, || format!("antipodal: {e}")),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for i in 0..20 {
        let m = rng.gen_range(2..=5);
        let dim = rng.gen_range(1..=6);
        let g: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        match mgda_minnorm(&g) {
            Ok(r) => {
                let kkt = kkt_residual(&g, &r.weights);
                t.check(kkt <= 1e-6, || format!("instance {i}: KKT residual {kkt:e}"));
                if let Ok(bf) = brute_force_min_norm(&g) {
                    t.check((r.norm_sq - bf.norm_sq).abs() <= 1e-8, || {
                        format!("instance {i}: norm^2 {} vs face enumeration {}", r.norm_sq, bf.norm_sq)
                    });
                }
            }
            Err(e) => t.check(false, || format!("instance {i}: {e}")),
        }
    }
    t
}

fn controllers() -> Tally {
    let mut t = Tally::default();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;

    match CtwaState::new(&[1.0], &[0.15], 0.1, 0.05).and_then(|mut s| ctwa_step(&mut s, &[0.05]).map(|u| (s, u))) {
        Ok((s, up)) => {
            t.check(close(s.ema[0], 0.005), || format!("CTWA EMA {}", s.ema[0]));
            t.check(close(up.deficits[0], 0.145), || format!("CTWA deficit {}", up.deficits[0]));
            let u = s.weights.log_weights()[0];
            t.check(close(u, 0.00725), || format!("CTWA log-weight {u}"));
        }
        Err(e) => t.check(false, || format!("CTWA: {e}")),
    }

    match LagrangianState::new(0, &[0.9], 0.01, 2) {
        Ok(mut s) => {
            s.multipliers[0] = 0.001;
            match s.dual_update(&[0.0, 1.9]) {
                Ok(()) => t.check(s.multipliers[0] == 0.0, || format!("Lagrangian projection {}", s.multipliers[0])),
                Err(e) => t.check(false, || format!("Lagrangian: {e}")),
            }
        }
        Err(e) => t.check(false, || format!("Lagrangian: {e}")),
    }
    match LagrangianState::new(0, &[0.9], 0.01, 2)
        .and_then(|mut s| lagrangian_step(&mut s, &[vec![1.0], vec![1.0]], &[0.0, 0.4]).map(|a| (s, a)))
    {
        Ok((s, a)) => {
            t.check(close(s.multipliers[0], 0.005), || format!("Lagrangian multiplier {}", s.multipliers[0]));
            t.check(close(a[0], 1.005), || format!("Lagrangian advantage {}", a[0]));
        }
        Err(e) => t.check(false, || format!("Lagrangian: {e}")),
    }

    let ts = tchebycheff_score(&[0.5, 0.5], &[1.0, 1.0], &[0.6, 1.0]);
    t.check(close(ts, -0.2), || format!("Tchebycheff score {ts}"));

    let g = vec![vec![3.0, 0.0], vec![0.0, 1.0], vec![0.0, 2.0]];
    match GradNormState::new(3, 1.5, 0.025).and_then(|mut s| gradnorm_step(&mut s, &[0.5, 0.7, 0.9], &g).map(|u| (s, u))) {
        Ok((s, up)) => {
            t.check(s.reference_losses() == Some(&[0.5, 0.7, 0.9][..]), || {
                format!("GradNorm reference losses {:?}", s.reference_losses())
            });
            t.check(up.targets.iter().all(|v| close(*v, 2.0)), || format!("GradNorm targets {:?}", up.targets));
        }
        Err(e) => t.check(false, || format!("GradNorm: {e}")),
    }
    t
}

/// Exact runs of both interference presets.
pub struct InterferenceRuns {
    pub linear: ExperimentOutput,
    pub ctwa: ExperimentOutput,
}

pub fn interference_runs() -> Result<InterferenceRuns, HarnessError> {
    let run = |name: &str| -> Result<ExperimentOutput, HarnessError> {
        let r = presets::require(name)?.resolve()?;
        run_experiment(&r.policy, &r.rewards, &r.train).map_err(|e| HarnessError::Verify(format!("{name}: {e}")))
    };
    Ok(InterferenceRuns {
        linear: run("interference-linear")?,
        ctwa: run("interference-ctwa")?,
    })
}

/// Longest run of strictly decreasing consecutive values, counted in steps.
pub fn longest_decrease(values: &[f64]) -> usize {
    let (mut best, mut cur) = (0, 0);
    for w in values.windows(2) {
        if w[1] < w[0] {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best
}

fn interference() -> Result<Tally, HarnessError> {
    let mut t = Tally::default();
    let runs = interference_runs()?;

    let r0: Vec<f64> = runs.linear.records.iter().map(|r| r.rewards[0]).collect();
    let run = longest_decrease(&r0);
    t.check(run >= 100, || format!("linear: r_0 decreases for only {run} consecutive steps"));
    t.note(format!("linear: r_0 strictly decreasing for {run} consecutive steps"));

    let last = runs.ctwa.records.last().ok_or_else(|| HarnessError::Verify("empty CTWA run".into()))?;
    for (m, (end, start)) in last.rewards.iter().zip(&runs.ctwa.initial_rewards).enumerate() {
        t.check(*end >= start - 1e-3, || format!("ctwa: objective {m} ends at {end} below initial {start}"));
    }
    let mut min_ema = vec![f64::INFINITY; presets::CTWA_TARGETS.len()];
    for rec in runs.ctwa.records.iter().filter(|r| r.step > presets::INTERFERENCE_BURN_IN) {
        for (lo, e) in min_ema.iter_mut().zip(&rec.ema) {
            *lo = lo.min(*e);
        }
    }
    for (m, (lo, target)) in min_ema.iter().zip(&presets::CTWA_TARGETS).enumerate() {
        t.check(*lo >= target - 0.02, || format!("ctwa: objective {m} EMA covariance {lo} < target {target} - 0.02"));
    }
    t.note(format!(
        "ctwa: final rewards {:.3?} from {:.3?}; min EMA after burn-in {:.3?}",
        last.rewards, runs.ctwa.initial_rewards, min_ema
    ));
    Ok(t)
}
