//! Finite, fully observable environments.
//!
//! Every environment has five actions and an enumerable state space. States are
//! dense indices into the list of walkable cells (or joint tuples), ordered
//! row-major by `(x, y)` with `x` fastest.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index of an environment state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub usize);

/// Dense index of a primitive action. The action set is the same at every state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl ActionId {
    /// Grid actions. For the two-joint arm the same indices mean
    /// joint1+, joint1-, joint2+, joint2-, noop.
    pub const UP: ActionId = ActionId(0);
    pub const DOWN: ActionId = ActionId(1);
    pub const LEFT: ActionId = ActionId(2);
    pub const RIGHT: ActionId = ActionId(3);
    pub const NOOP: ActionId = ActionId(4);
}

pub const NUM_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// `width x height` grid with wraparound on both axes.
    ToroidalGrid,
    /// The classic 13x13 four-rooms map; `width` and `height` must be 13.
    FourRooms,
    /// Two revolute joints, each discretised into `width` / `height` positions.
    /// Rotations wrap, so the joint space is a 2-torus.
    TwoJointArm,
}

fn default_dim() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Grid width, or the resolution of joint 1.
    #[serde(default = "default_dim")]
    pub width: usize,
    /// Grid height, or the resolution of joint 2.
    #[serde(default = "default_dim")]
    pub height: usize,
    /// Probability that the executed action is replaced by a uniformly random one.
    #[serde(default)]
    pub slip_prob: f64,
}

impl EnvConfig {
    pub fn toroidal_grid(width: usize, height: usize) -> Self {
        Self {
            kind: EnvKind::ToroidalGrid,
            width,
            height,
            slip_prob: 0.0,
        }
    }

    pub fn four_rooms() -> Self {
        Self {
            kind: EnvKind::FourRooms,
            width: FOUR_ROOMS_SIZE,
            height: FOUR_ROOMS_SIZE,
            slip_prob: 0.0,
        }
    }

    pub fn two_joint_arm(joint1: usize, joint2: usize) -> Self {
        Self {
            kind: EnvKind::TwoJointArm,
            width: joint1,
            height: joint2,
            slip_prob: 0.0,
        }
    }

    pub fn with_slip(mut self, slip_prob: f64) -> Self {
        self.slip_prob = slip_prob;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!(
                "env dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::Config(format!(
                "env.slip_prob must lie in [0, 1), got {}",
                self.slip_prob
            )));
        }
        if self.kind == EnvKind::FourRooms
            && (self.width != FOUR_ROOMS_SIZE || self.height != FOUR_ROOMS_SIZE)
        {
            return Err(Error::Config(format!(
                "four_rooms layout is fixed at {FOUR_ROOMS_SIZE}x{FOUR_ROOMS_SIZE}, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

pub const FOUR_ROOMS_SIZE: usize = 13;

/// The four-rooms map. `#` is wall. Doorways sit at (x=6, y=3), (x=6, y=10),
/// (x=2, y=6) and (x=9, y=7); the horizontal inner wall is offset by one row
/// between the left and right halves, so the layout has no mirror symmetry.
pub const FOUR_ROOMS_LAYOUT: [&str; FOUR_ROOMS_SIZE] = [
    "#############",
    "#     #     #",
    "#     #     #",
    "#           #",
    "#     #     #",
    "#     #     #",
    "## ####     #",
    "#     ### ###",
    "#     #     #",
    "#     #     #",
    "#           #",
    "#     #     #",
    "#############",
];

/// A goal attached to an environment for the hierarchical phase. Entering
/// `goal` yields `reward` and ends the episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalTask {
    pub goal: StateId,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: StateId,
    pub extrinsic_reward: f64,
    pub terminal: bool,
}

/// A validated environment instance.
///
/// Stepping is a pure function of `(state, action, rng)`, so one instance can
/// be shared by any number of rollout workers that own their own rng streams.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    cells: Vec<(usize, usize)>,
    index: Vec<Option<StateId>>,
    task: Option<GoalTask>,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let (w, h) = (config.width, config.height);
        let walkable = |x: usize, y: usize| match config.kind {
            EnvKind::FourRooms => FOUR_ROOMS_LAYOUT[y].as_bytes()[x] != b'#',
            _ => true,
        };
        let mut cells = Vec::new();
        let mut index = vec![None; w * h];
        for y in 0..h {
            for x in 0..w {
                if walkable(x, y) {
                    index[y * w + x] = Some(StateId(cells.len()));
                    cells.push((x, y));
                }
            }
        }
        Ok(Self {
            config,
            cells,
            index,
            task: None,
        })
    }

    /// Attach an extrinsic goal. Without one, rewards are zero and no step is terminal.
    pub fn with_goal(mut self, task: GoalTask) -> Result<Self> {
        self.check_state(task.goal)?;
        self.task = Some(task);
        Ok(self)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn task(&self) -> Option<&GoalTask> {
        self.task.as_ref()
    }

    pub fn num_states(&self) -> usize {
        self.cells.len()
    }

    pub fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    /// Width and height of the underlying grid (joint resolutions for the arm).
    pub fn dims(&self) -> (usize, usize) {
        (self.config.width, self.config.height)
    }

    /// True when both coordinates wrap, which makes displacements well defined.
    pub fn is_torus(&self) -> bool {
        matches!(self.config.kind, EnvKind::ToroidalGrid | EnvKind::TwoJointArm)
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = StateId> + '_ {
        (0..self.cells.len()).map(StateId)
    }

    pub fn coords(&self, s: StateId) -> (usize, usize) {
        self.cells[s.0]
    }

    pub fn state_at(&self, x: usize, y: usize) -> Option<StateId> {
        if x >= self.config.width || y >= self.config.height {
            return None;
        }
        self.index[y * self.config.width + x]
    }

    /// Draws a start state uniformly over all (walkable) states.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        StateId(rng.gen_range(0..self.cells.len()))
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: StateId,
        action: ActionId,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        self.check_state(state)?;
        if action.0 >= NUM_ACTIONS {
            return Err(Error::Contract(format!(
                "action {} out of range [0, {NUM_ACTIONS})",
                action.0
            )));
        }
        let executed = if self.config.slip_prob > 0.0 && rng.gen::<f64>() < self.config.slip_prob {
            ActionId(rng.gen_range(0..NUM_ACTIONS))
        } else {
            action
        };
        let next_state = self.transition(state, executed);
        let (extrinsic_reward, terminal) = match self.task {
            Some(task) if task.goal == next_state => (task.reward, true),
            _ => (0.0, false),
        };
        Ok(StepOutcome {
            next_state,
            extrinsic_reward,
            terminal,
        })
    }

    /// Deterministic part of the dynamics: where `action` leads from `state`.
    pub fn transition(&self, state: StateId, action: ActionId) -> StateId {
        let (w, h) = self.dims();
        let (x, y) = self.cells[state.0];
        let (dx, dy): (isize, isize) = match action {
            ActionId::UP => (0, -1),
            ActionId::DOWN => (0, 1),
            ActionId::LEFT => (-1, 0),
            ActionId::RIGHT => (1, 0),
            _ => (0, 0),
        };
        match self.config.kind {
            EnvKind::ToroidalGrid | EnvKind::TwoJointArm => {
                let nx = (x as isize + dx).rem_euclid(w as isize) as usize;
                let ny = (y as isize + dy).rem_euclid(h as isize) as usize;
                self.index[ny * w + nx].expect("torus cells are all walkable")
            }
            EnvKind::FourRooms => {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    return state;
                }
                self.state_at(nx as usize, ny as usize).unwrap_or(state)
            }
        }
    }

    /// Coordinate-wise displacement `to - from` modulo the grid size.
    pub fn displacement(&self, from: StateId, to: StateId) -> Result<(usize, usize)> {
        if !self.is_torus() {
            return Err(Error::Inapplicable {
                what: "displacement",
                env: format!("{:?}", self.config.kind),
            });
        }
        let (w, h) = self.dims();
        let (x0, y0) = self.coords(from);
        let (x1, y1) = self.coords(to);
        Ok(((x1 + w - x0) % w, (y1 + h - y0) % h))
    }

    /// Chebyshev distance; wraps on torus-family environments.
    pub fn chebyshev(&self, a: StateId, b: StateId) -> usize {
        let (w, h) = self.dims();
        let (x0, y0) = self.coords(a);
        let (x1, y1) = self.coords(b);
        let dx = x0.abs_diff(x1);
        let dy = y0.abs_diff(y1);
        if self.is_torus() {
            dx.min(w - dx).max(dy.min(h - dy))
        } else {
            dx.max(dy)
        }
    }

    /// One-hot feature vector of a state.
    pub fn one_hot(&self, s: StateId) -> Vec<f64> {
        let mut v = vec![0.0; self.num_states()];
        v[s.0] = 1.0;
        v
    }

    /// ASCII rendering of the layout: `#` wall, `.` walkable.
    pub fn layout_ascii(&self) -> String {
        let (w, h) = self.dims();
        let mut out = String::with_capacity((w + 1) * h);
        for y in 0..h {
            for x in 0..w {
                out.push(if self.state_at(x, y).is_some() { '.' } else { '#' });
            }
            out.push('\n');
        }
        out
    }

    pub fn check_state(&self, s: StateId) -> Result<()> {
        if s.0 >= self.cells.len() {
            return Err(Error::Contract(format!(
                "state {} out of range [0, {})",
                s.0,
                self.cells.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn torus(w: usize, h: usize) -> Env {
        Env::new(EnvConfig::toroidal_grid(w, h)).unwrap()
    }

    #[test]
    fn single_cell_torus_resets_to_origin() {
        let env = torus(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = env.reset(&mut rng);
        assert_eq!(env.coords(s), (0, 0));
    }

    #[test]
    fn reset_is_reproducible() {
        let env = torus(8, 8);
        let a: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            (0..20).map(|_| env.reset(&mut rng)).collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b: Vec<_> = (0..20).map(|_| env.reset(&mut rng)).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.0 < 64));
    }

    #[test]
    fn zero_sized_grid_is_rejected() {
        assert!(matches!(
            Env::new(EnvConfig::toroidal_grid(0, 4)),
            Err(Error::Config(_))
        ));
        assert!(Env::new(EnvConfig::toroidal_grid(3, 3).with_slip(1.0)).is_err());
        let mut bad = EnvConfig::four_rooms();
        bad.width = 11;
        assert!(Env::new(bad).is_err());
    }

    #[test]
    fn torus_wraps_and_noop_is_identity() {
        let env = torus(5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = env.state_at(4, 0).unwrap();
        let out = env.step(s, ActionId::RIGHT, &mut rng).unwrap();
        assert_eq!(env.coords(out.next_state), (0, 0));
        let s = env.state_at(2, 2).unwrap();
        let out = env.step(s, ActionId::NOOP, &mut rng).unwrap();
        assert_eq!(env.coords(out.next_state), (2, 2));
        assert!(!out.terminal);
        assert_eq!(out.extrinsic_reward, 0.0);
    }

    #[test]
    fn out_of_range_ids_are_contract_errors() {
        let env = torus(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            env.step(StateId(9), ActionId::UP, &mut rng),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            env.step(StateId(0), ActionId(5), &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(torus(2, 3).states().len(), 6);
        let arm = Env::new(EnvConfig::two_joint_arm(8, 8)).unwrap();
        assert_eq!(arm.states().len(), 64);
        // Count the open cells of the layout directly.
        let open: usize = FOUR_ROOMS_LAYOUT
            .iter()
            .map(|row| row.bytes().filter(|&c| c != b'#').count())
            .sum();
        let rooms = Env::new(EnvConfig::four_rooms()).unwrap();
        assert_eq!(open, 104);
        assert_eq!(rooms.num_states(), open);
    }

    #[test]
    fn coords_invert_state_ids() {
        for env in [
            torus(4, 7),
            Env::new(EnvConfig::four_rooms()).unwrap(),
            Env::new(EnvConfig::two_joint_arm(6, 5)).unwrap(),
        ] {
            for s in env.states() {
                let (x, y) = env.coords(s);
                assert_eq!(env.state_at(x, y), Some(s));
            }
        }
    }

    #[test]
    fn four_rooms_never_enters_walls() {
        let env = Env::new(EnvConfig::four_rooms()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = env.reset(&mut rng);
            let (x, y) = env.coords(s);
            assert_ne!(FOUR_ROOMS_LAYOUT[y].as_bytes()[x], b'#');
        }
        for s in env.states() {
            for a in 0..NUM_ACTIONS {
                let next = env.step(s, ActionId(a), &mut rng).unwrap().next_state;
                let (x, y) = env.coords(next);
                assert_ne!(FOUR_ROOMS_LAYOUT[y].as_bytes()[x], b'#');
            }
        }
    }

    #[test]
    fn four_rooms_bumping_into_a_wall_stays_put() {
        let env = Env::new(EnvConfig::four_rooms()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // (5, 1) has the vertical inner wall at (6, 1) to its right.
        let s = env.state_at(5, 1).unwrap();
        assert_eq!(FOUR_ROOMS_LAYOUT[1].as_bytes()[6], b'#');
        assert_eq!(env.step(s, ActionId::RIGHT, &mut rng).unwrap().next_state, s);
        // (1, 1) is in the corner: up and left both hit the outer wall.
        let c = env.state_at(1, 1).unwrap();
        assert_eq!(env.transition(c, ActionId::UP), c);
        assert_eq!(env.transition(c, ActionId::LEFT), c);
        // The doorway at (6, 3) lets the agent through.
        let d = env.state_at(5, 3).unwrap();
        assert_eq!(env.coords(env.transition(d, ActionId::RIGHT)), (6, 3));
    }

    #[test]
    fn arm_joints_wrap() {
        let env = Env::new(EnvConfig::two_joint_arm(8, 6)).unwrap();
        let s = env.state_at(7, 0).unwrap();
        assert_eq!(env.coords(env.transition(s, ActionId(3))), (0, 0));
        assert_eq!(env.coords(env.transition(s, ActionId(0))), (7, 5));
    }

    #[test]
    fn torus_translation_invariance() {
        let env = torus(6, 4);
        for a in 0..NUM_ACTIONS {
            let disp: Vec<_> = env
                .states()
                .map(|s| env.displacement(s, env.transition(s, ActionId(a))).unwrap())
                .collect();
            assert!(disp.windows(2).all(|w| w[0] == w[1]), "action {a}");
        }
    }

    #[test]
    fn slip_replaces_actions_sometimes() {
        let env = Env::new(EnvConfig::toroidal_grid(5, 5).with_slip(0.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = env.state_at(2, 2).unwrap();
        let moved = (0..2000)
            .filter(|_| env.step(s, ActionId::NOOP, &mut rng).unwrap().next_state != s)
            .count();
        // Slip picks one of the four moving actions with probability 0.5 * 4/5.
        let frac = moved as f64 / 2000.0;
        assert!((frac - 0.4).abs() < 0.05, "{frac}");
    }

    #[test]
    fn goal_makes_step_terminal() {
        let env = torus(3, 3)
            .with_goal(GoalTask {
                goal: StateId(1),
                reward: 1.0,
            })
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = env.step(StateId(0), ActionId::RIGHT, &mut rng).unwrap();
        assert_eq!(out.next_state, StateId(1));
        assert!(out.terminal);
        assert_eq!(out.extrinsic_reward, 1.0);
    }

    #[test]
    fn chebyshev_wraps_on_torus() {
        let env = torus(15, 15);
        let a = env.state_at(0, 0).unwrap();
        assert_eq!(env.chebyshev(a, env.state_at(14, 3).unwrap()), 3);
        assert_eq!(env.chebyshev(a, env.state_at(7, 7).unwrap()), 7);
    }

    #[test]
    fn layout_dump_matches_mask() {
        let env = Env::new(EnvConfig::four_rooms()).unwrap();
        let dump = env.layout_ascii();
        for (row, line) in FOUR_ROOMS_LAYOUT.iter().zip(dump.lines()) {
            assert_eq!(row.replace(' ', "."), line);
        }
    }
}
