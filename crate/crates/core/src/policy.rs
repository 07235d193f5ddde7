//! Skill-conditioned tabular Q-learning.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{ActionId, Env, StateId};
use crate::error::{Error, Result};
use crate::skills::{ActMode, SkillActor, SkillEpisode, SkillId};

/// Linear ε decay from `start` to `end` over `decay_steps` updates, flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        Self {
            start: eps,
            end: eps,
            decay_steps: 0,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |e: f64| (0.0..=1.0).contains(&e);
        if !ok(self.start) || !ok(self.end) || self.end > self.start {
            return Err(Error::Config(format!(
                "epsilon schedule must satisfy 0 <= end <= start <= 1, got {} -> {}",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

/// Greedy action over a row of action values; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy over a row of action values.
pub fn epsilon_greedy<R: Rng + ?Sized>(row: &[f64], eps: f64, rng: &mut R) -> usize {
    if eps > 0.0 && rng.gen::<f64>() < eps {
        rng.gen_range(0..row.len())
    } else {
        argmax(row)
    }
}

/// `Q[w][s][a]` with a step size and an exploration schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillPolicy {
    num_skills: usize,
    num_states: usize,
    num_actions: usize,
    q_values: Vec<f64>,
    step_size: f64,
    epsilon: EpsilonSchedule,
    updates: u64,
}

impl SkillPolicy {
    pub fn new(
        num_skills: usize,
        num_states: usize,
        num_actions: usize,
        step_size: f64,
        epsilon: EpsilonSchedule,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Config("policy needs at least one state and action".into()));
        }
        if !(0.0..=1.0).contains(&step_size) {
            return Err(Error::Config(format!(
                "policy step size must lie in [0, 1], got {step_size}"
            )));
        }
        epsilon.validate()?;
        Ok(Self {
            num_skills,
            num_states,
            num_actions,
            q_values: vec![0.0; num_skills * num_states * num_actions],
            step_size,
            epsilon,
            updates: 0,
        })
    }

    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Exploration rate at the current update count.
    pub fn epsilon(&self) -> f64 {
        self.epsilon.value(self.updates)
    }

    fn offset(&self, skill: SkillId, s: StateId) -> usize {
        (skill.0 * self.num_states + s.0) * self.num_actions
    }

    pub fn row(&self, skill: SkillId, s: StateId) -> &[f64] {
        let o = self.offset(skill, s);
        &self.q_values[o..o + self.num_actions]
    }

    pub fn row_mut(&mut self, skill: SkillId, s: StateId) -> &mut [f64] {
        let o = self.offset(skill, s);
        &mut self.q_values[o..o + self.num_actions]
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q_values
    }

    pub fn greedy_action(&self, s: StateId, skill: SkillId) -> ActionId {
        ActionId(argmax(self.row(skill, s)))
    }

    /// Backward one-step Q-learning sweep over `t = T..1`.
    ///
    /// `target_t = r_t + γ_t · max_a Q[w][s_t][a]`; at `t = T` this bootstraps
    /// across the skill-episode boundary unless `γ_T = 0`.
    pub fn learn(&mut self, episode: &SkillEpisode) -> Result<()> {
        let t_max = episode.actions.len();
        if episode.states.len() != t_max + 1
            || episode.rewards.len() != t_max
            || episode.discounts.len() != t_max
        {
            return Err(Error::Contract(format!(
                "malformed skill episode: {} states, {} actions, {} rewards, {} discounts",
                episode.states.len(),
                t_max,
                episode.rewards.len(),
                episode.discounts.len()
            )));
        }
        if episode.skill.0 >= self.num_skills {
            return Err(Error::Contract(format!(
                "skill {} out of range [0, {})",
                episode.skill.0, self.num_skills
            )));
        }
        if let Some(s) = episode.states.iter().find(|s| s.0 >= self.num_states) {
            return Err(Error::Contract(format!("state {} out of range", s.0)));
        }
        let skill = episode.skill;
        let beta = self.step_size;
        for t in (1..=t_max).rev() {
            let s_next = episode.states[t];
            let continuation = self.row(skill, s_next).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let target = episode.rewards[t - 1] + episode.discounts[t - 1] * continuation;
            let a = episode.actions[t - 1].0;
            let cell = &mut self.row_mut(skill, episode.states[t - 1])[a];
            *cell = (1.0 - beta) * *cell + beta * target;
        }
        self.updates += 1;
        Ok(())
    }

    /// SHA-256 over the raw bits of the Q-table.
    pub fn table_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.q_values {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl SkillActor for SkillPolicy {
    fn act(
        &self,
        state: StateId,
        skill: SkillId,
        mode: ActMode,
        rng: &mut dyn rand::RngCore,
    ) -> ActionId {
        let row = self.row(skill, state);
        match mode {
            ActMode::Greedy => ActionId(argmax(row)),
            ActMode::Explore => ActionId(epsilon_greedy(row, self.epsilon(), rng)),
        }
    }
}

/// Greedy end state of `skill` from every start state, indexed by start.
pub fn evaluate_skill_map<A>(
    actor: &A,
    env: &Env,
    skill: SkillId,
    episode_length: usize,
) -> Result<Vec<StateId>>
where
    A: SkillActor + ?Sized,
{
    if env.config().slip_prob != 0.0 {
        return Err(Error::Contract(
            "skill maps are only defined for deterministic environments (slip_prob = 0)".into(),
        ));
    }
    // No randomness is consumed: greedy actions and zero slip.
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    env.states()
        .map(|start| {
            let mut s = start;
            for _ in 0..episode_length {
                let a = actor.act(s, skill, ActMode::Greedy, &mut rng);
                s = env.step(s, a, &mut rng)?.next_state;
            }
            Ok(s)
        })
        .collect()
}
