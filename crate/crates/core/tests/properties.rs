mod common;

use covbench_core::calculus::{exponential_tilt, grpo_advantages, reward_covariance};
use covbench_core::scalarize::{
    ctwa_step, gradnorm_step, kkt_residual, lagrangian_step, mgda_minnorm, tchebycheff_step, CtwaState,
    GradNormState, LagrangianState, TchebycheffState,
};
use covbench_core::{CompletionDist, EnvSpec, RewardTable, TabularPolicy};
use proptest::prelude::*;

fn env_strategy() -> impl Strategy<Value = EnvSpec> {
    (1usize..=2, 2usize..=3, 1usize..=3, 1usize..=3).prop_map(|(p, v, l, m)| EnvSpec::new(p, v, l, m, 1.0).unwrap())
}

fn policy_strategy() -> impl Strategy<Value = TabularPolicy> {
    env_strategy().prop_flat_map(|env| {
        prop::collection::vec(-30.0f64..30.0, env.num_params())
            .prop_map(move |l| TabularPolicy::from_logits(&env, l).unwrap())
    })
}

fn dist_strategy() -> impl Strategy<Value = CompletionDist> {
    prop::collection::vec(0.01f64..1.0, 2..6).prop_map(|w| {
        let s: f64 = w.iter().sum();
        CompletionDist::new(w.iter().map(|v| v / s).collect()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn completion_dist_normalized(pol in policy_strategy()) {
        for x in 0..pol.env().num_prompts() {
            let d = pol.completion_dist(x).unwrap();
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(d.probs().iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn softmax_shift_invariance(pol in policy_strategy(), shift in -20.0f64..20.0) {
        let env = pol.env().clone();
        let v = env.vocab_size();
        let shifted: Vec<f64> = pol
            .logits()
            .iter()
            .enumerate()
            .map(|(i, l)| l + shift * ((i / v) as f64 * 0.37).sin())
            .collect();
        let other = TabularPolicy::from_logits(&env, shifted).unwrap();
        for x in 0..env.num_prompts() {
            let a = pol.completion_dist(x).unwrap();
            let b = other.completion_dist(x).unwrap();
            for (p, q) in a.probs().iter().zip(b.probs()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn expected_reward_linear(pol in policy_strategy(), a in -1.0f64..1.0, b in -1.0f64..1.0, seed in 0u64..1000) {
        let env = pol.env().clone();
        let f1 = |x: usize, y: usize| ((x * 31 + y * 7 + seed as usize) as f64).sin();
        let f2 = |x: usize, y: usize| ((x * 13 + y * 5 + seed as usize) as f64).cos();
        let r1 = RewardTable::from_fn(&env, |x, y, _| f1(x, y)).unwrap();
        let r2 = RewardTable::from_fn(&env, |x, y, _| f2(x, y)).unwrap();
        let env2 = EnvSpec::new(env.num_prompts(), env.vocab_size(), env.out_len(), env.num_objectives(), 2.0).unwrap();
        let mix = RewardTable::from_fn(&env2, |x, y, _| a * f1(x, y) + b * f2(x, y)).unwrap();
        let pol2 = TabularPolicy::from_logits(&env2, pol.logits().to_vec()).unwrap();
        let lhs = pol2.expected_reward(&mix, 0);
        let rhs = a * pol.expected_reward(&r1, 0) + b * pol.expected_reward(&r2, 0);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn tilt_identity_and_normalization(d in dist_strategy(), eta in -5.0f64..5.0) {
        let s: Vec<f64> = (0..d.len()).map(|i| (i as f64 * 1.3).sin()).collect();
        let t = exponential_tilt(&d, &s, 0.0).unwrap();
        prop_assert_eq!(t.tilted.probs(), d.probs());
        let t = exponential_tilt(&d, &s, eta).unwrap();
        prop_assert!((t.tilted.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_symmetric(d in dist_strategy()) {
        let a: Vec<f64> = (0..d.len()).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..d.len()).map(|i| (i as f64 * 2.0).cos()).collect();
        prop_assert!((reward_covariance(&d, &a, &b) - reward_covariance(&d, &b, &a)).abs() < 1e-15);
        prop_assert!(reward_covariance(&d, &a, &a) >= -1e-15);
    }

    #[test]
    fn advantages_centered(scores in prop::collection::vec(-3.0f64..3.0, 2..20)) {
        let a = grpo_advantages(&scores).unwrap();
        prop_assert!(a.iter().sum::<f64>().abs() < 1e-9);
        let var = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
        prop_assert!(var.abs() < 1e-9 || (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ctwa_weights_never_decrease(covs in prop::collection::vec(prop::collection::vec(-0.5f64..0.5, 3), 1..30)) {
        let mut s = CtwaState::new(&[0.333, 0.333, 0.334], &[0.15, 0.08, 0.08], 0.1, 0.05).unwrap();
        for c in &covs {
            let before = s.weights.clone();
            let prev_ema = s.ema.clone();
            ctwa_step(&mut s, c).unwrap();
            for m in 0..3 {
                prop_assert!(s.weights.lambda()[m] >= before.lambda()[m]);
                prop_assert!(s.weights.lambda()[m] > 0.0);
                prop_assert!((s.weights.lambda()[m] - s.weights.log_weights()[m].exp()).abs() < 1e-12);
                let lo = prev_ema[m].min(c[m]);
                let hi = prev_ema[m].max(c[m]);
                prop_assert!(s.ema[m] >= lo - 1e-15 && s.ema[m] <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn lagrangian_multipliers_nonnegative(exps in prop::collection::vec(prop::collection::vec(-1.0f64..2.0, 3), 1..30)) {
        let mut s = LagrangianState::new(0, &[0.9, 0.9], 0.01, 3).unwrap();
        for e in &exps {
            let adv = vec![vec![1.0, -1.0]; 3];
            lagrangian_step(&mut s, &adv, e).unwrap();
            prop_assert!(s.multipliers.iter().all(|l| *l >= 0.0));
        }
    }

    #[test]
    fn tchebycheff_scores_nonpositive(batches in prop::collection::vec(prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 1..6), 1..10)) {
        let mut s = TchebycheffState::new(&[0.4, 0.6]).unwrap();
        let mut prev: Option<Vec<f64>> = None;
        for b in &batches {
            let rows: Vec<&[f64]> = b.iter().map(|r| r.as_slice()).collect();
            let scores = tchebycheff_step(&mut s, &rows).unwrap();
            prop_assert!(scores.iter().all(|v| *v <= 0.0));
            let z = s.reference().unwrap().to_vec();
            if let Some(p) = &prev {
                prop_assert!(z.iter().zip(p).all(|(a, b)| a >= b));
            }
            prev = Some(z);
        }
    }

    #[test]
    fn gradnorm_weights_sum_to_m(steps in prop::collection::vec((prop::collection::vec(0.01f64..1.0, 3), prop::collection::vec(-2.0f64..2.0, 6)), 1..20)) {
        let mut s = GradNormState::new(3, 1.5, 0.025).unwrap();
        let l0 = steps[0].0.clone();
        for (losses, g) in &steps {
            let grads = vec![g[0..2].to_vec(), g[2..4].to_vec(), g[4..6].to_vec()];
            let up = gradnorm_step(&mut s, losses, &grads).unwrap();
            prop_assert!((up.weights.iter().sum::<f64>() - 3.0).abs() < 1e-12);
            prop_assert!(up.weights.iter().all(|w| *w > 0.0));
        }
        prop_assert_eq!(s.reference_losses().unwrap(), l0.as_slice());
    }

    #[test]
    fn mgda_kkt_and_scale(m in 1usize..=5, dim in 1usize..=6, seed in 0u64..10_000, c in 0.01f64..100.0) {
        let g: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..dim).map(|j| (((i * 7 + j * 3) as u64 + seed) as f64 * 0.61).sin()).collect())
            .collect();
        let r = mgda_minnorm(&g).unwrap();
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.weights.iter().all(|w| *w >= 0.0));
        prop_assert!(kkt_residual(&g, &r.weights) <= 1e-6);
        let scaled: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
        let r2 = mgda_minnorm(&scaled).unwrap();
        for (a, b) in r.weights.iter().zip(&r2.weights) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }
}
