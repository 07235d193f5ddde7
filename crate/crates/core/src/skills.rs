//! Skills, the fixed skill prior and skill-episode bookkeeping.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionId, Env, StateId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkillId(pub usize);

impl fmt::Display for SkillId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "skill{}", self.0)
    }
}

/// How the skill-episode reward is formed from predictor outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Probabilities: `q(w|s0,sT) - q_abs(w|sT)` (or `q(w|s0,sT)` for VIC).
    ProbDiff,
    /// Log-probabilities: `log q(w|s0,sT) - log q_abs(w|sT)` (or `log q` for VIC).
    LogQ,
}

/// Which objective the skills are trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Relative VIC: rewarded by the relative predictor, penalised by the absolute one.
    Rvic,
    /// Plain VIC: rewarded by the relative predictor only.
    Vic,
}

impl BaselineMode {
    pub fn label(self) -> &'static str {
        match self {
            BaselineMode::Rvic => "rvic",
            BaselineMode::Vic => "vic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkillConfig {
    pub num_skills: usize,
    /// Steps per skill episode (`T`).
    pub episode_length: usize,
    /// Skill episodes chained between base-environment resets (`M`).
    pub episodes_per_reset: usize,
    pub discount: f64,
    /// Discount applied at the last step of a skill episode. `0` stops
    /// bootstrapping across skill episodes; `discount` allows it.
    pub final_step_discount: f64,
    /// Write the episode reward at every step instead of only the last one.
    pub dense_reward: bool,
    pub reward_mode: RewardMode,
    pub baseline_mode: BaselineMode,
}

impl Default for SkillConfig {
    fn default() -> Self {
        Self {
            num_skills: 16,
            episode_length: 10,
            episodes_per_reset: 10,
            discount: 0.9,
            final_step_discount: 0.0,
            dense_reward: true,
            reward_mode: RewardMode::ProbDiff,
            baseline_mode: BaselineMode::Rvic,
        }
    }
}

impl SkillConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("skills.num_skills", self.num_skills),
            ("skills.episode_length", self.episode_length),
            ("skills.episodes_per_reset", self.episodes_per_reset),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Config(format!(
                "skills.discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        if !(0.0..=1.0).contains(&self.final_step_discount) {
            return Err(Error::Config(format!(
                "skills.final_step_discount must lie in [0, 1], got {}",
                self.final_step_discount
            )));
        }
        Ok(())
    }

    /// Per-step discounts `γ_1..γ_T`.
    pub fn discounts(&self) -> Vec<f64> {
        let mut d = vec![self.discount; self.episode_length];
        d[self.episode_length - 1] = self.final_step_discount;
        d
    }
}

/// The fixed uniform prior over skills. It is never adapted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkillPrior {
    num_skills: usize,
}

impl SkillPrior {
    pub fn uniform(num_skills: usize) -> Result<Self> {
        if num_skills == 0 {
            return Err(Error::Config("the skill prior needs at least one skill".into()));
        }
        Ok(Self { num_skills })
    }

    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    pub fn probability(&self, _skill: SkillId) -> f64 {
        1.0 / self.num_skills as f64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SkillId {
        SkillId(rng.gen_range(0..self.num_skills))
    }
}

/// Whether an actor explores or acts greedily.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Explore,
    Greedy,
}

/// Anything that can choose an action for a skill at a state.
pub trait SkillActor {
    fn act(&self, state: StateId, skill: SkillId, mode: ActMode, rng: &mut dyn rand::RngCore)
        -> ActionId;
}

/// One fixed-length rollout of a single skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillEpisode {
    pub skill: SkillId,
    /// `s_0..s_T`.
    pub states: Vec<StateId>,
    /// `a_1..a_T`.
    pub actions: Vec<ActionId>,
    /// `r_1..r_T`; zero until [`assign_rewards`] runs.
    pub rewards: Vec<f64>,
    /// `γ_1..γ_T`.
    pub discounts: Vec<f64>,
}

impl SkillEpisode {
    pub fn start(&self) -> StateId {
        self.states[0]
    }

    pub fn end(&self) -> StateId {
        *self.states.last().expect("episodes hold at least one state")
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Serialises the episode as a single JSON line (no trailing newline).
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }
}

/// Rolls out `config.episode_length` steps of `skill` from `start`.
pub fn run_skill_episode<A, R>(
    actor: &A,
    env: &Env,
    skill: SkillId,
    start: StateId,
    config: &SkillConfig,
    mode: ActMode,
    rng: &mut R,
) -> Result<SkillEpisode>
where
    A: SkillActor + ?Sized,
    R: rand::RngCore,
{
    env.check_state(start)?;
    let t_max = config.episode_length;
    let mut states = Vec::with_capacity(t_max + 1);
    let mut actions = Vec::with_capacity(t_max);
    states.push(start);
    let mut s = start;
    for _ in 0..t_max {
        let a = actor.act(s, skill, mode, rng);
        s = env.step(s, a, rng)?.next_state;
        actions.push(a);
        states.push(s);
    }
    Ok(SkillEpisode {
        skill,
        states,
        actions,
        rewards: vec![0.0; t_max],
        discounts: config.discounts(),
    })
}

/// What happens after the `m`-th skill episode of a base-environment episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextStart {
    /// Continue from this state.
    Chain(StateId),
    /// Reset the base environment.
    Reset,
}

/// Chains skill episodes: the end of episode `m` starts episode `m + 1`
/// unless `m` has reached `episodes_per_reset`.
pub fn chain_next_start(previous: &SkillEpisode, m: usize, config: &SkillConfig) -> NextStart {
    if m < config.episodes_per_reset {
        NextStart::Chain(previous.end())
    } else {
        NextStart::Reset
    }
}

/// Writes the episode reward `r` (every step when dense, last step otherwise)
/// and the configured discounts.
pub fn assign_rewards(mut episode: SkillEpisode, r: f64, config: &SkillConfig) -> Result<SkillEpisode> {
    if !r.is_finite() {
        return Err(Error::Contract(format!("skill reward must be finite, got {r}")));
    }
    let t_max = episode.actions.len();
    if config.dense_reward {
        episode.rewards = vec![r; t_max];
    } else {
        episode.rewards = vec![0.0; t_max];
        if let Some(last) = episode.rewards.last_mut() {
            *last = r;
        }
    }
    episode.discounts = vec![config.discount; t_max];
    if let Some(last) = episode.discounts.last_mut() {
        *last = config.final_step_discount;
    }
    Ok(episode)
}
