mod common;

use common::instance;
use covbench_core::calculus::natural_gradient_flat;
use covbench_core::scalarize::ControllerConfig;
use covbench_core::toy::log_odds_step;
use covbench_core::train::{run_experiment, Algorithm, Normalization, TrainConfig, Trainer};
use covbench_core::{EnvSpec, RewardTable, TabularPolicy};

fn config(algorithm: Algorithm, lr: f64, steps: usize, controller: ControllerConfig) -> TrainConfig {
    TrainConfig {
        algorithm,
        learning_rate: lr,
        group_size: 8,
        batch_prompts: 4,
        eps_clip: 0.2,
        beta_kl: 0.0,
        lambda_entropy: 0.0,
        steps,
        seed: 42,
        momentum: 0.0,
        inner_epochs: 1,
        normalization: Normalization::Sum,
        controller,
    }
}

fn linear(m: usize) -> ControllerConfig {
    ControllerConfig::Linear {
        weights: vec![1.0 / m as f64; m],
    }
}

#[test]
fn reinforce_value_is_nondecreasing_for_small_steps() {
    for seed in 0..10 {
        let inst = instance(seed, 2.0);
        let m = inst.env.num_objectives();
        let cfg = config(Algorithm::Reinforce, 1e-3, 50, linear(m));
        let mut trainer = Trainer::new(&inst.policy, &inst.rewards, &cfg).unwrap();
        let mut prev = trainer.policy().value(&trainer.score_table());
        for _ in 0..50 {
            let rec = trainer.step().unwrap();
            assert!(rec.value >= prev - 1e-10, "seed {seed}");
            prev = rec.value;
        }
    }
}

#[test]
fn natural_step_on_two_modes_matches_log_odds_map() {
    // Flat two-completion policy; a natural-gradient step of E[s] is the tilt.
    let env = EnvSpec::new(1, 2, 1, 1, 1.0).unwrap();
    let (s_bad, s_good, eta) = (1.0, 0.2, 0.3);
    let mut pol = TabularPolicy::from_logits(&env, vec![0.4f64.ln(), 0.6f64.ln()]).unwrap();
    let mut p = 0.4;
    for _ in 0..20 {
        let d = pol.completion_dist(0).unwrap();
        let dir = natural_gradient_flat(&d, &[s_bad, s_good]).unwrap();
        for (l, v) in pol.logits_mut().iter_mut().zip(&dir) {
            *l += eta * v;
        }
        p = log_odds_step(p, s_good, s_bad, eta);
        assert!((pol.completion_dist(0).unwrap().probs()[0] - p).abs() < 1e-12);
    }
}

#[test]
fn grpo_equal_scores_leave_parameters() {
    let env = EnvSpec::new(2, 2, 2, 1, 1.0).unwrap();
    let r = RewardTable::from_fn(&env, |_, _, _| 0.5).unwrap();
    let pol = TabularPolicy::from_logits(&env, (0..env.num_params()).map(|i| (i as f64).sin()).collect()).unwrap();
    let out = run_experiment(&pol, &r, &config(Algorithm::Grpo, 0.1, 3, linear(1))).unwrap();
    assert_eq!(out.policy, pol);
}

#[test]
fn grpo_is_deterministic() {
    let inst = instance(3, 1.0);
    let m = inst.env.num_objectives();
    let cfg = config(Algorithm::Grpo, 0.05, 10, linear(m));
    let a = run_experiment(&inst.policy, &inst.rewards, &cfg).unwrap();
    let b = run_experiment(&inst.policy, &inst.rewards, &cfg).unwrap();
    assert_eq!(a.policy, b.policy);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.rewards, y.rewards);
        assert_eq!(x.covariances, y.covariances);
        assert_eq!(x.distortion, y.distortion);
    }
}

#[test]
fn kl_regularizer_pulls_back_toward_start() {
    let env = EnvSpec::new(1, 2, 1, 1, 1.0).unwrap();
    let r = RewardTable::new(&env, vec![1.0, 0.0]).unwrap();
    let pol = TabularPolicy::uniform(&env);
    let mut free = config(Algorithm::Reinforce, 0.5, 40, linear(1));
    let a = run_experiment(&pol, &r, &free).unwrap();
    free.beta_kl = 1.0;
    let b = run_experiment(&pol, &r, &free).unwrap();
    assert!(b.records.last().unwrap().rewards[0] < a.records.last().unwrap().rewards[0]);
}

#[test]
fn interference_linear_then_ctwa() {
    // Completions 00, 01, 10, 11 carry reward rows A, C, B, D.
    let env = EnvSpec::new(1, 2, 2, 3, 1.0).unwrap();
    let rows = [[1.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0], [0.0, 0.0, 0.0]];
    let r = RewardTable::from_fn(&env, |_, y, m| rows[y][m]).unwrap();
    let l9 = 9f64.ln();
    let pol = TabularPolicy::from_logits(&env, vec![0.0, 0.0, l9, 0.0, l9, 0.0]).unwrap();
    let w0 = vec![0.333, 0.333, 0.334];
    let lin = run_experiment(&pol, &r, &config(Algorithm::Reinforce, 0.1, 300, ControllerConfig::Linear { weights: w0.clone() })).unwrap();
    let r0: Vec<f64> = lin.records.iter().map(|x| x.rewards[0]).collect();
    assert!(r0.windows(2).take(150).all(|w| w[1] < w[0]));

    let ctwa = ControllerConfig::Ctwa {
        initial_weights: w0,
        targets: vec![0.15, 0.08, 0.08],
        ema_rate: 0.1,
        weight_lr: 0.05,
    };
    let out = run_experiment(&pol, &r, &config(Algorithm::Reinforce, 0.1, 300, ctwa)).unwrap();
    let last = out.records.last().unwrap();
    for m in 0..3 {
        assert!(last.rewards[m] >= out.initial_rewards[m] - 1e-3);
    }
    let targets = [0.15, 0.08, 0.08];
    for rec in &out.records[100..] {
        for m in 0..3 {
            assert!(rec.ema[m] >= targets[m] - 0.02);
        }
    }
}
