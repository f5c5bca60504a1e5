#![allow(dead_code)]

use covbench_core::{EnvSpec, RewardTable, ScoreTable, TabularPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub env: EnvSpec,
    pub policy: TabularPolicy,
    pub rewards: RewardTable,
    pub scores: ScoreTable,
}

/// Small random environment with logits in [−scale, scale] and rewards in [−1, 1].
pub fn instance(seed: u64, scale: f64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompts = rng.gen_range(1..=2);
    let vocab = rng.gen_range(2..=3);
    let len = rng.gen_range(1..=2);
    let m = rng.gen_range(1..=3);
    let env = EnvSpec::new(prompts, vocab, len, m, 1.0).unwrap();
    let logits = (0..env.num_params()).map(|_| rng.gen_range(-scale..=scale)).collect();
    let policy = TabularPolicy::from_logits(&env, logits).unwrap();
    let rewards = RewardTable::from_fn(&env, |_, _, _| rng.gen_range(-1.0..=1.0)).unwrap();
    let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
    let scores = rewards.scalarize(|row| row.iter().zip(&w).map(|(a, b)| a * b).sum());
    Instance {
        env,
        policy,
        rewards,
        scores,
    }
}

pub fn rel_close(a: &[f64], b: &[f64], rel: f64) -> bool {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rel * scale)
}
