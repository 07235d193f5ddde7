//! Hierarchical phase: a tabular meta-controller choosing between primitive
//! actions and frozen skills, with SMDP reward accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionId, Env, EnvConfig, GoalTask, StateId, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::policy::{argmax, epsilon_greedy, EpsilonSchedule, SkillPolicy};
use crate::skills::SkillId;
use crate::trainer::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetaAction {
    Primitive(ActionId),
    Skill(SkillId),
}

impl MetaAction {
    /// Column of this action in a meta Q-row: primitives first, then skills.
    pub fn index(self) -> usize {
        match self {
            MetaAction::Primitive(a) => a.0,
            MetaAction::Skill(w) => NUM_ACTIONS + w.0,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i < NUM_ACTIONS {
            MetaAction::Primitive(ActionId(i))
        } else {
            MetaAction::Skill(SkillId(i - NUM_ACTIONS))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    /// Cost `c` deducted on every meta decision, primitive or skill.
    pub meta_action_cost: f64,
    /// Steps a skill runs for; `None` uses the length the skills were trained with.
    pub skill_exec_length: Option<usize>,
    pub discount: f64,
    /// Goal cell as `(x, y)`.
    pub goal: (usize, usize),
    pub goal_reward: f64,
    /// Primitive-step budget per episode.
    pub step_cap: usize,
    /// Episodes start uniformly among states at least this Chebyshev distance from the goal.
    pub start_min_chebyshev: usize,
    pub step_size: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `episodes` over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    pub episodes: u64,
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            meta_action_cost: 0.0,
            skill_exec_length: None,
            discount: 0.99,
            goal: (0, 0),
            goal_reward: 1.0,
            step_cap: 500,
            start_min_chebyshev: 3,
            step_size: 0.5,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            episodes: 2_000,
            eval_every: 50,
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.meta_action_cost >= 0.0 && self.meta_action_cost.is_finite()) {
            return Err(Error::Config(format!(
                "meta_action_cost must be finite and >= 0, got {}",
                self.meta_action_cost
            )));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Config(format!("meta discount must lie in [0, 1), got {}", self.discount)));
        }
        if !(0.0..=1.0).contains(&self.step_size) {
            return Err(Error::Config(format!("meta step size must lie in [0, 1], got {}", self.step_size)));
        }
        if !self.goal_reward.is_finite() {
            return Err(Error::Config("goal_reward must be finite".into()));
        }
        if self.skill_exec_length == Some(0) {
            return Err(Error::Config("skill_exec_length must be >= 1".into()));
        }
        if self.step_cap == 0 || self.episodes == 0 || self.eval_every == 0 {
            return Err(Error::Config("step_cap, episodes and eval_every must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return Err(Error::Config("epsilon_decay_fraction must lie in [0, 1]".into()));
        }
        self.epsilon_schedule().validate()
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            decay_steps: (self.episodes as f64 * self.epsilon_decay_fraction) as u64,
        }
    }
}

/// Pre-trained skills the meta-controller may invoke. Nothing here learns.
#[derive(Debug, Clone)]
pub struct FrozenSkills {
    policy: SkillPolicy,
    trained_length: usize,
    label: String,
}

impl FrozenSkills {
    pub fn new(policy: SkillPolicy, trained_length: usize, label: impl Into<String>) -> Self {
        Self {
            policy,
            trained_length,
            label: label.into(),
        }
    }

    /// The empty skill set: the meta-controller only has primitives.
    pub fn none(num_states: usize) -> Result<Self> {
        let policy = SkillPolicy::new(0, num_states, NUM_ACTIONS, 0.0, EpsilonSchedule::constant(0.0))?;
        Ok(Self::new(policy, 1, "primitive"))
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Self {
        Self::new(
            checkpoint.state.policy.clone(),
            checkpoint.config.skills.episode_length,
            checkpoint.config.skills.baseline_mode.label(),
        )
    }

    pub fn num_skills(&self) -> usize {
        self.policy.num_skills()
    }

    pub fn num_states(&self) -> usize {
        self.policy.num_states()
    }

    pub fn trained_length(&self) -> usize {
        self.trained_length
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn policy(&self) -> &SkillPolicy {
        &self.policy
    }

    pub fn table_hash(&self) -> String {
        self.policy.table_hash()
    }

    fn check_env(&self, env: &Env) -> Result<()> {
        if self.num_states() != env.num_states() || self.policy.num_actions() != env.num_actions() {
            return Err(Error::Config(format!(
                "skills were trained on {} states / {} actions but the environment has {} / {}",
                self.num_states(),
                self.policy.num_actions(),
                env.num_states(),
                env.num_actions()
            )));
        }
        Ok(())
    }
}

/// Result of one meta decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTransition {
    pub s_before: StateId,
    pub action: MetaAction,
    /// `Σ_k γ^k r_{k+1} − c`.
    pub accumulated_reward: f64,
    /// `γ^duration`, or 0 when the episode ended.
    pub effective_discount: f64,
    pub s_after: StateId,
    pub terminal: bool,
    pub duration: usize,
    /// Primitive actions issued during the decision.
    pub primitive_actions: Vec<ActionId>,
}

/// Runs one meta action from `s`. A skill runs greedily for `exec_length`
/// steps, stopping early on a terminal step or when `budget` steps are used.
#[allow(clippy::too_many_arguments)]
pub fn execute_meta_action<R: Rng + ?Sized>(
    action: MetaAction,
    s: StateId,
    skills: &FrozenSkills,
    env: &Env,
    exec_length: usize,
    discount: f64,
    cost: f64,
    budget: usize,
    rng: &mut R,
) -> Result<MetaTransition> {
    let steps = match action {
        MetaAction::Primitive(_) => 1,
        MetaAction::Skill(w) => {
            if w.0 >= skills.num_skills() {
                return Err(Error::Contract(format!(
                    "skill {} out of range [0, {})",
                    w.0,
                    skills.num_skills()
                )));
            }
            exec_length
        }
    }
    .min(budget.max(1));
    let mut state = s;
    let mut total = 0.0;
    let mut scale = 1.0;
    let mut terminal = false;
    let mut primitive_actions = Vec::with_capacity(steps);
    for _ in 0..steps {
        let a = match action {
            MetaAction::Primitive(a) => a,
            MetaAction::Skill(w) => skills.policy.greedy_action(state, w),
        };
        let out = env.step(state, a, rng)?;
        primitive_actions.push(a);
        total += scale * out.extrinsic_reward;
        scale *= discount;
        state = out.next_state;
        if out.terminal {
            terminal = true;
            break;
        }
    }
    Ok(MetaTransition {
        s_before: s,
        action,
        accumulated_reward: total - cost,
        effective_discount: if terminal { 0.0 } else { scale },
        s_after: state,
        terminal,
        duration: primitive_actions.len(),
        primitive_actions,
    })
}

/// Realized discounted return of a chain of meta transitions.
pub fn meta_return(transitions: &[MetaTransition]) -> f64 {
    let mut total = 0.0;
    let mut scale = 1.0;
    for t in transitions {
        total += scale * t.accumulated_reward;
        scale *= t.effective_discount;
    }
    total
}

/// `Q[s][meta action]` over primitives followed by skills.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPolicy {
    num_states: usize,
    num_meta_actions: usize,
    q_values: Vec<f64>,
    step_size: f64,
    epsilon: EpsilonSchedule,
}

impl MetaPolicy {
    pub fn new(num_states: usize, num_skills: usize, step_size: f64, epsilon: EpsilonSchedule) -> Result<Self> {
        epsilon.validate()?;
        let num_meta_actions = NUM_ACTIONS + num_skills;
        Ok(Self {
            num_states,
            num_meta_actions,
            q_values: vec![0.0; num_states * num_meta_actions],
            step_size,
            epsilon,
        })
    }

    pub fn num_meta_actions(&self) -> usize {
        self.num_meta_actions
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q_values
    }

    pub fn epsilon(&self, episode: u64) -> f64 {
        self.epsilon.value(episode)
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        let o = s.0 * self.num_meta_actions;
        &self.q_values[o..o + self.num_meta_actions]
    }

    pub fn row_mut(&mut self, s: StateId) -> &mut [f64] {
        let o = s.0 * self.num_meta_actions;
        &mut self.q_values[o..o + self.num_meta_actions]
    }

    pub fn greedy(&self, s: StateId) -> MetaAction {
        MetaAction::from_index(argmax(self.row(s)))
    }

    pub fn act<R: Rng + ?Sized>(&self, s: StateId, eps: f64, rng: &mut R) -> MetaAction {
        MetaAction::from_index(epsilon_greedy(self.row(s), eps, rng))
    }
}

/// SMDP Q-learning: `target = R + effective_discount · max_b Q[s_after][b]`.
pub fn meta_learn(policy: &mut MetaPolicy, t: &MetaTransition) -> Result<()> {
    let col = t.action.index();
    if col >= policy.num_meta_actions || t.s_before.0 >= policy.num_states || t.s_after.0 >= policy.num_states {
        return Err(Error::Contract("meta transition does not fit the meta policy".into()));
    }
    let next = policy.row(t.s_after).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let target = t.accumulated_reward + t.effective_discount * next;
    let beta = policy.step_size;
    let cell = &mut policy.row_mut(t.s_before)[col];
    *cell = (1.0 - beta) * *cell + beta * target;
    Ok(())
}

/// One point of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub arm: String,
    pub seed: u64,
    pub episodes: u64,
    /// Mean undiscounted extrinsic return of greedy rollouts from every start.
    pub return_mean: f64,
    /// Mean number of meta decisions taken by those rollouts.
    pub decisions_mean: f64,
}

pub const CURVE_HEADER: [&str; 5] = ["arm", "seed", "episodes", "return_mean", "decisions_mean"];

#[derive(Debug, Clone)]
pub struct HrlOutcome {
    pub policy: MetaPolicy,
    pub curve: Vec<CurveRow>,
}

/// The goal-task environment and its start set.
pub fn goal_env(env_config: &EnvConfig, config: &MetaConfig) -> Result<(Env, Vec<StateId>)> {
    let base = Env::new(env_config.clone())?;
    let (x, y) = config.goal;
    let goal = base.state_at(x, y).ok_or_else(|| {
        Error::Config(format!("goal ({x}, {y}) is not a walkable cell of the environment"))
    })?;
    let env = base.with_goal(GoalTask {
        goal,
        reward: config.goal_reward,
    })?;
    let starts: Vec<StateId> = env
        .states()
        .filter(|&s| env.chebyshev(s, goal) >= config.start_min_chebyshev)
        .collect();
    if starts.is_empty() {
        return Err(Error::Config(format!(
            "no state is at Chebyshev distance >= {} from the goal",
            config.start_min_chebyshev
        )));
    }
    Ok((env, starts))
}

struct EpisodeStats {
    extrinsic: f64,
    decisions: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_episode<R: Rng + ?Sized>(
    policy: &mut MetaPolicy,
    skills: &FrozenSkills,
    env: &Env,
    config: &MetaConfig,
    exec_length: usize,
    start: StateId,
    eps: Option<f64>,
    rng: &mut R,
) -> Result<EpisodeStats> {
    let mut s = start;
    let mut steps = 0;
    let mut stats = EpisodeStats {
        extrinsic: 0.0,
        decisions: 0,
    };
    while steps < config.step_cap {
        let action = match eps {
            Some(e) => policy.act(s, e, rng),
            None => policy.greedy(s),
        };
        let t = execute_meta_action(
            action,
            s,
            skills,
            env,
            exec_length,
            config.discount,
            config.meta_action_cost,
            config.step_cap - steps,
            rng,
        )?;
        if eps.is_some() {
            meta_learn(policy, &t)?;
        }
        steps += t.duration;
        stats.decisions += 1;
        if t.terminal {
            stats.extrinsic += config.goal_reward;
            break;
        }
        s = t.s_after;
    }
    Ok(stats)
}

/// Greedy rollouts from every start; returns (mean return, mean decisions).
pub fn evaluate_meta(
    policy: &MetaPolicy,
    skills: &FrozenSkills,
    env: &Env,
    starts: &[StateId],
    config: &MetaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let exec_length = config.skill_exec_length.unwrap_or(skills.trained_length());
    let mut frozen = policy.clone();
    let (mut ret, mut dec) = (0.0, 0.0);
    for &s in starts {
        let st = run_episode(&mut frozen, skills, env, config, exec_length, s, None, rng)?;
        ret += st.extrinsic;
        dec += st.decisions as f64;
    }
    let n = starts.len() as f64;
    Ok((ret / n, dec / n))
}

/// Trains a meta-controller on the goal task. The curve has a row at episode 0
/// and then every `eval_every` episodes.
pub fn train_hrl(config: &MetaConfig, skills: &FrozenSkills, env_config: &EnvConfig) -> Result<HrlOutcome> {
    config.validate()?;
    let (env, starts) = goal_env(env_config, config)?;
    skills.check_env(&env)?;
    let exec_length = config.skill_exec_length.unwrap_or(skills.trained_length());
    let mut policy = MetaPolicy::new(
        env.num_states(),
        skills.num_skills(),
        config.step_size,
        config.epsilon_schedule(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut curve = Vec::new();
    let mut record = |policy: &MetaPolicy, episodes: u64, rng: &mut ChaCha8Rng| -> Result<()> {
        let (return_mean, decisions_mean) = evaluate_meta(policy, skills, &env, &starts, config, rng)?;
        curve.push(CurveRow {
            arm: skills.label().to_string(),
            seed: config.seed,
            episodes,
            return_mean,
            decisions_mean,
        });
        Ok(())
    };
    record(&policy, 0, &mut eval_rng)?;
    for episode in 0..config.episodes {
        let start = starts[rng.gen_range(0..starts.len())];
        let eps = policy.epsilon(episode);
        run_episode(&mut policy, skills, &env, config, exec_length, start, Some(eps), &mut rng)?;
        if (episode + 1) % config.eval_every == 0 {
            record(&policy, episode + 1, &mut eval_rng)?;
        }
    }
    Ok(HrlOutcome { policy, curve })
}

/// First curve point whose mean return reaches `threshold`.
pub fn episodes_to_threshold(curve: &[CurveRow], threshold: f64) -> Option<u64> {
    curve.iter().find(|r| r.return_mean >= threshold).map(|r| r.episodes)
}

/// Appends curve rows to a CSV, writing `# comment` and the header on a fresh file.
pub fn emit_curve_csv(rows: &[CurveRow], path: &std::path::Path, comment: Option<&str>) -> Result<()> {
    use std::io::Write;
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh {
        if let Some(c) = comment {
            writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
        }
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(CURVE_HEADER)?;
    }
    for r in rows {
        w.write_record([
            r.arm.clone(),
            r.seed.to_string(),
            r.episodes.to_string(),
            r.return_mean.to_string(),
            r.decisions_mean.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
