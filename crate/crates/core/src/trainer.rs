//! The skill-discovery loop and its checkpoints.
//!
//! One base-environment episode consists of `M` chained skill episodes. For each
//! skill episode the loop samples a skill, rolls it out, rewards it from the
//! predictor snapshot, updates the policy, then updates both predictors.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{Env, EnvConfig, StateId};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, MetricsRow, RolloutSet};
use crate::policy::{evaluate_skill_map, EpsilonSchedule, SkillPolicy};
use crate::predictors::{PredictorConfig, PredictorPair, SnapshotPredictors};
use crate::skills::{
    assign_rewards, chain_next_start, run_skill_episode, ActMode, NextStart, SkillConfig,
    SkillEpisode, SkillId, SkillPrior,
};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub step_size: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `total_skill_episodes` over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Skill episodes between refreshes of the acting copy of the Q-table.
    pub actor_update_period: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            actor_update_period: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub skills: SkillConfig,
    pub predictor: PredictorConfig,
    pub policy: PolicyConfig,
    pub total_skill_episodes: u64,
    pub eval_every: u64,
    pub seed: u64,
    /// Rollout workers. `1` is the canonical single-threaded mode.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::toroidal_grid(8, 8),
            skills: SkillConfig::default(),
            predictor: PredictorConfig::default(),
            policy: PolicyConfig::default(),
            total_skill_episodes: 200_000,
            eval_every: 10_000,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.skills.validate()?;
        self.predictor.validate()?;
        self.epsilon_schedule().validate()?;
        if !(0.0..=1.0).contains(&self.policy.step_size) {
            return Err(Error::Config(format!(
                "policy.step_size must lie in [0, 1], got {}",
                self.policy.step_size
            )));
        }
        if !(0.0..=1.0).contains(&self.policy.epsilon_decay_fraction) {
            return Err(Error::Config("policy.epsilon_decay_fraction must lie in [0, 1]".into()));
        }
        if self.policy.actor_update_period == 0 {
            return Err(Error::Config("policy.actor_update_period must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.policy.epsilon_start,
            end: self.policy.epsilon_end,
            decay_steps: (self.total_skill_episodes as f64 * self.policy.epsilon_decay_fraction)
                .round() as u64,
        }
    }

    /// Short stable digest of the serialised configuration.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// First 16 hex digits of the SHA-256 of the JSON serialisation.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configs always serialise");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..8])
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub policy: SkillPolicy,
    /// Stale acting copy when `actor_update_period > 1`.
    pub actor: Option<SkillPolicy>,
    pub predictors: SnapshotPredictors,
    pub rng: ChaCha8Rng,
    pub episodes_done: u64,
    /// Skill episodes completed in the current base-environment episode.
    pub chain_position: usize,
    /// Start of the next skill episode; `None` means reset first.
    pub next_start: Option<StateId>,
    pub resets: u64,
}

/// A training run in progress.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    env: Env,
    eval_env: Env,
    prior: SkillPrior,
    state: TrainState,
}

/// What a finished run hands back.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: SkillPolicy,
    pub predictors: SnapshotPredictors,
    pub log: Vec<MetricsRow>,
    pub checkpoint: Checkpoint,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let env = Env::new(config.env.clone())?;
        let k = config.skills.num_skills;
        let policy = SkillPolicy::new(
            k,
            env.num_states(),
            env.num_actions(),
            config.policy.step_size,
            config.epsilon_schedule(),
        )?;
        let pair = config.predictor.build(env.num_states(), k)?;
        let predictors = SnapshotPredictors::new(pair, config.predictor.snapshot_period)?;
        let actor = (config.policy.actor_update_period > 1).then(|| policy.clone());
        let state = TrainState {
            policy,
            actor,
            predictors,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            episodes_done: 0,
            chain_position: 0,
            next_start: None,
            resets: 0,
        };
        Self::assemble(config, state)
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        Self::assemble(checkpoint.config, checkpoint.state)
    }

    fn assemble(config: TrainConfig, state: TrainState) -> Result<Self> {
        config.validate()?;
        let env = Env::new(config.env.clone())?;
        let eval_env = Env::new(EnvConfig {
            slip_prob: 0.0,
            ..config.env.clone()
        })?;
        let prior = SkillPrior::uniform(config.skills.num_skills)?;
        if state.policy.num_states() != env.num_states()
            || state.policy.num_skills() != config.skills.num_skills
            || state.predictors.live().num_states() != env.num_states()
            || state.predictors.live().num_skills() != config.skills.num_skills
        {
            return Err(Error::Config(
                "training state does not match the environment / skill configuration".into(),
            ));
        }
        Ok(Self {
            config,
            env,
            eval_env,
            prior,
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn policy(&self) -> &SkillPolicy {
        &self.state.policy
    }

    pub fn predictors(&self) -> &SnapshotPredictors {
        &self.state.predictors
    }

    pub fn episodes_done(&self) -> u64 {
        self.state.episodes_done
    }

    pub fn is_finished(&self) -> bool {
        self.state.episodes_done >= self.config.total_skill_episodes
    }

    pub fn arm(&self) -> &'static str {
        self.config.skills.baseline_mode.label()
    }

    fn wrap(&self, source: Error) -> Error {
        Error::Training {
            episode: self.state.episodes_done,
            seed: self.config.seed,
            source: Box::new(source),
        }
    }

    /// Greedy start→end maps of every skill, indexed `[skill][start]`.
    pub fn skill_maps(&self) -> Result<Vec<Vec<StateId>>> {
        skill_maps(&self.state.policy, &self.eval_env, self.config.skills.episode_length)
    }

    /// Metrics of the current greedy skills over all start states.
    pub fn evaluate(&self) -> Result<MetricsReport> {
        let rollouts = RolloutSet::from_skill_maps(&self.skill_maps()?)?;
        MetricsReport::compute(&rollouts, &self.eval_env)
    }

    fn metrics_row(&self) -> Result<MetricsRow> {
        Ok(MetricsRow {
            episode: self.state.episodes_done,
            arm: self.arm().to_string(),
            seed: self.config.seed,
            report: self.evaluate()?,
        })
    }

    /// Rewards, learns from and logs one rolled-out episode; returns the
    /// finished episode and a metrics row when one is due.
    fn consume(&mut self, episode: SkillEpisode) -> Result<(SkillEpisode, Option<MetricsRow>)> {
        let cfg = &self.config.skills;
        let st = &mut self.state;
        let (skill, s0, s_t) = (episode.skill, episode.start(), episode.end());
        let r = st
            .predictors
            .reward(skill, s0, s_t, cfg.reward_mode, cfg.baseline_mode);
        let episode = assign_rewards(episode, r, cfg)?;
        st.policy.learn(&episode)?;
        st.predictors.update(skill, s0, s_t);
        st.episodes_done += 1;
        let period = self.config.policy.actor_update_period;
        if period > 1 && st.episodes_done.is_multiple_of(period) {
            st.actor = Some(st.policy.clone());
        }
        let row = if st.episodes_done.is_multiple_of(self.config.eval_every) {
            Some(self.metrics_row()?)
        } else {
            None
        };
        Ok((episode, row))
    }

    /// Runs one skill episode in canonical mode.
    pub fn step_episode(&mut self) -> Result<(SkillEpisode, Option<MetricsRow>)> {
        let st = &mut self.state;
        let s0 = match st.next_start {
            Some(s) => s,
            None => {
                st.resets += 1;
                st.chain_position = 0;
                self.env.reset(&mut st.rng)
            }
        };
        let skill = self.prior.sample(&mut st.rng);
        let actor = st.actor.as_ref().unwrap_or(&st.policy);
        let episode = run_skill_episode(
            actor,
            &self.env,
            skill,
            s0,
            &self.config.skills,
            ActMode::Explore,
            &mut st.rng,
        )?;
        st.chain_position += 1;
        st.next_start = match chain_next_start(&episode, st.chain_position, &self.config.skills) {
            NextStart::Chain(s) => Some(s),
            NextStart::Reset => None,
        };
        self.consume(episode)
    }

    /// Runs up to `max_episodes` more skill episodes (never past the configured
    /// total), calling `on_row` for every metrics row and `on_episode` for every
    /// rewarded episode.
    pub fn run_with(
        &mut self,
        max_episodes: u64,
        mut on_row: impl FnMut(&MetricsRow) -> Result<()>,
        mut on_episode: impl FnMut(&SkillEpisode) -> Result<()>,
    ) -> Result<()> {
        let target = self
            .config
            .total_skill_episodes
            .min(self.state.episodes_done.saturating_add(max_episodes));
        if self.config.workers > 1 {
            return self.run_parallel(target, &mut on_row, &mut on_episode);
        }
        while self.state.episodes_done < target {
            let (episode, row) = self.step_episode().map_err(|e| self.wrap(e))?;
            on_episode(&episode)?;
            if let Some(row) = row {
                on_row(&row)?;
            }
        }
        Ok(())
    }

    /// Runs up to `max_episodes` more skill episodes and returns the metrics rows.
    pub fn run(&mut self, max_episodes: u64) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        self.run_with(
            max_episodes,
            |row| {
                rows.push(row.clone());
                Ok(())
            },
            |_| Ok(()),
        )?;
        Ok(rows)
    }

    /// Parallel mode: each round, `workers` rollout workers each play one
    /// base-environment episode of `M` chained skill episodes against a frozen
    /// copy of the policy. Worker `w` of a round is seeded from the learner rng,
    /// and the learner consumes episodes in (worker, chain position) order.
    fn run_parallel(
        &mut self,
        target: u64,
        on_row: &mut impl FnMut(&MetricsRow) -> Result<()>,
        on_episode: &mut impl FnMut(&SkillEpisode) -> Result<()>,
    ) -> Result<()> {
        use rand::Rng;
        while self.state.episodes_done < target {
            let seeds: Vec<u64> = (0..self.config.workers)
                .map(|_| self.state.rng.gen())
                .collect();
            let actor = self.state.policy.clone();
            let env = &self.env;
            let prior = self.prior;
            let cfg = &self.config.skills;
            let batches: Vec<Result<Vec<SkillEpisode>>> = seeds
                .par_iter()
                .map(|&seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut s0 = env.reset(&mut rng);
                    let mut out = Vec::with_capacity(cfg.episodes_per_reset);
                    for m in 1..=cfg.episodes_per_reset {
                        let skill = prior.sample(&mut rng);
                        let ep = run_skill_episode(
                            &actor,
                            env,
                            skill,
                            s0,
                            cfg,
                            ActMode::Explore,
                            &mut rng,
                        )?;
                        if let NextStart::Chain(s) = chain_next_start(&ep, m, cfg) {
                            s0 = s;
                        }
                        out.push(ep);
                    }
                    Ok(out)
                })
                .collect();
            self.state.resets += self.config.workers as u64;
            for batch in batches {
                let batch = batch.map_err(|e| self.wrap(e))?;
                for ep in batch {
                    if self.state.episodes_done >= target {
                        return Ok(());
                    }
                    let (ep, row) = self.consume(ep).map_err(|e| self.wrap(e))?;
                    on_episode(&ep)?;
                    if let Some(row) = row {
                        on_row(&row)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            artifact_version: crate::ARTIFACT_VERSION.to_string(),
            config_hash: self.config.hash(),
            config: self.config.clone(),
            state: self.state.clone(),
        }
    }

    pub fn into_outcome(self, log: Vec<MetricsRow>) -> TrainOutcome {
        let checkpoint = self.checkpoint();
        TrainOutcome {
            policy: self.state.policy,
            predictors: self.state.predictors,
            log,
            checkpoint,
        }
    }
}

/// Greedy start→end maps for every skill of `policy`.
pub fn skill_maps(policy: &SkillPolicy, env: &Env, episode_length: usize) -> Result<Vec<Vec<StateId>>> {
    (0..policy.num_skills())
        .map(|k| evaluate_skill_map(policy, env, SkillId(k), episode_length))
        .collect()
}

/// Runs a full training job from scratch.
pub fn train_skills(config: TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config)?;
    let log = trainer.run(u64::MAX)?;
    Ok(trainer.into_outcome(log))
}

/// A self-describing snapshot of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub artifact_version: String,
    pub config_hash: String,
    pub config: TrainConfig,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let refuse = |reason: String| Error::Checkpoint {
            path: origin.to_path_buf(),
            reason,
        };
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| refuse(format!("not a checkpoint: {e}")))?;
        let version = value.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(CHECKPOINT_FORMAT_VERSION)) {
            return Err(refuse(format!(
                "format version {version:?} is not supported (expected {CHECKPOINT_FORMAT_VERSION})"
            )));
        }
        let cp: Checkpoint =
            serde_json::from_value(value).map_err(|e| refuse(format!("malformed checkpoint: {e}")))?;
        let actual = cp.config.hash();
        if actual != cp.config_hash {
            return Err(refuse(format!(
                "config hash mismatch: recorded {}, embedded config hashes to {actual}",
                cp.config_hash
            )));
        }
        Ok(cp)
    }

    /// The trained skill policy.
    pub fn policy(&self) -> &SkillPolicy {
        &self.state.policy
    }

    pub fn predictors(&self) -> &PredictorPair {
        self.state.predictors.live()
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

/// Loads a checkpoint and refuses it unless it was produced by `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &TrainConfig) -> Result<Checkpoint> {
    let cp = load_checkpoint(path)?;
    let want = expected.hash();
    if cp.config_hash != want {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("config hash {} does not match {want}", cp.config_hash),
        });
    }
    Ok(cp)
}
