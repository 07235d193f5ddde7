//! Trains RVIC and VIC skill sets on an 8x8 torus and prints their diagnostics.
//!
//! `cargo run --release --example phenomenon -- [episodes] [seeds]`

use rvic::env::EnvConfig;
use rvic::skills::{BaselineMode, SkillConfig};
use rvic::trainer::{TrainConfig, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let episodes: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(200_000);
    let seeds: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3);
    for mode in [BaselineMode::Rvic, BaselineMode::Vic] {
        for seed in 0..seeds {
            let cfg = TrainConfig {
                env: EnvConfig::toroidal_grid(8, 8),
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
                eval_every: episodes / 10,
                seed,
                ..TrainConfig::default()
            };
            let mut cfg = cfg;
            cfg.predictor.decay = 0.9;
            cfg.policy.step_size = 0.3;
            let t0 = std::time::Instant::now();
            let mut t = Trainer::new(cfg).unwrap();
            let rows = t.run(u64::MAX).unwrap();
            for r in &rows {
                let m = &r.report;
                println!(
                    "{} seed {} ep {:>7}: I(sT;w|s0)={:.3} I(s0;w|sT)={:.3} part={:.3} rel={:.3}",
                    r.arm, seed, r.episode, m.mi_end_given_start, m.mi_start_given_end,
                    m.partition_score, m.relativity_score.unwrap()
                );
            }
            println!("  ({:.1}s)", t0.elapsed().as_secs_f64());
        }
    }
}
