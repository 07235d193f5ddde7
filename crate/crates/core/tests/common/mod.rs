//! Independent reference implementations and generators shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::hash::Hash;

use rand::Rng;
use rvic::env::{EnvConfig, StateId};
use rvic::metrics::{RolloutRecord, RolloutSet};
use rvic::skills::{BaselineMode, SkillConfig, SkillId};
use rvic::trainer::TrainConfig;

/// `Σ c log2 c` over a plain histogram, with compensated summation.
fn sum_c_log_c<K: Hash + Eq>(keys: impl Iterator<Item = K>) -> f64 {
    let mut hist: HashMap<K, u64> = HashMap::new();
    for k in keys {
        *hist.entry(k).or_insert(0) += 1;
    }
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &c in hist.values() {
        let term = c as f64 * (c as f64).log2();
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Brute-force entropies via `H(A | B) = H(A, B) - H(B)` on joint histograms.
#[derive(Debug, Clone, Copy)]
pub struct OracleEntropies {
    pub skill_given_end: f64,
    pub skill_given_start: f64,
    pub skill_given_both: f64,
    pub mi_end_given_start: f64,
    pub mi_start_given_end: f64,
}

pub fn oracle_entropies(records: &[RolloutRecord]) -> OracleEntropies {
    // With n records, H(A, B) - H(B) = (Σ_b c_b log2 c_b - Σ_ab c_ab log2 c_ab) / n.
    let n = records.len() as f64;
    let r = || records.iter();
    let cond = |joint: f64, marginal: f64| (marginal - joint) / n;
    let skill_given_end = cond(
        sum_c_log_c(r().map(|x| (x.skill.0, x.end.0))),
        sum_c_log_c(r().map(|x| x.end.0)),
    );
    let skill_given_start = cond(
        sum_c_log_c(r().map(|x| (x.skill.0, x.start.0))),
        sum_c_log_c(r().map(|x| x.start.0)),
    );
    let skill_given_both = cond(
        sum_c_log_c(r().map(|x| (x.skill.0, x.start.0, x.end.0))),
        sum_c_log_c(r().map(|x| (x.start.0, x.end.0))),
    );
    OracleEntropies {
        skill_given_end,
        skill_given_start,
        skill_given_both,
        mi_end_given_start: skill_given_start - skill_given_both,
        mi_start_given_end: skill_given_end - skill_given_both,
    }
}

/// A random rollout set mixing deterministic skill maps with uniform noise,
/// so that the entropies range from 0 to their maximum.
pub fn random_rollouts<R: Rng>(rng: &mut R, max_records: usize) -> RolloutSet {
    let k = rng.gen_range(1..=16);
    let n = rng.gen_range(1..=64);
    let len = rng.gen_range(1..=max_records);
    let noise: f64 = rng.gen();
    let maps: Vec<Vec<usize>> = (0..k).map(|_| (0..n).map(|_| rng.gen_range(0..n)).collect()).collect();
    let records = (0..len)
        .map(|_| {
            let w = rng.gen_range(0..k);
            let s0 = rng.gen_range(0..n);
            let end = if rng.gen::<f64>() < noise { rng.gen_range(0..n) } else { maps[w][s0] };
            RolloutRecord {
                skill: SkillId(w),
                start: StateId(s0),
                end: StateId(end),
            }
        })
        .collect();
    RolloutSet::new(records).unwrap()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Skill-discovery setup of the phenomenon experiment.
pub fn phenomenon_config(env: EnvConfig, mode: BaselineMode, seed: u64, episodes: u64) -> TrainConfig {
    let mut c = TrainConfig {
        env,
        skills: SkillConfig {
            num_skills: 4,
            episode_length: 4,
            episodes_per_reset: 10,
            discount: 0.9,
            final_step_discount: 0.0,
            dense_reward: true,
            baseline_mode: mode,
            ..SkillConfig::default()
        },
        total_skill_episodes: episodes,
        eval_every: episodes,
        seed,
        ..TrainConfig::default()
    };
    c.predictor.decay = 0.9;
    c.policy.step_size = 0.3;
    c
}
