//! Inverse skill predictors and the intrinsic reward.
//!
//! The relative predictor `q(w | s0, sT)` sees both ends of a skill episode; the
//! absolute predictor `q_abs(w | sT)` sees only the end. Two families are
//! provided: decayed, smoothed counts (the default) and softmax heads over one-hot
//! state features trained by stochastic gradient ascent on the log-likelihood.
//!
//! Rewards are always computed from a frozen snapshot of the pair, refreshed
//! every `snapshot_period` updates, while the live pair keeps learning.

use serde::{Deserialize, Serialize};

use crate::env::StateId;
use crate::error::{Error, Result};
use crate::skills::{BaselineMode, RewardMode, SkillId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorFamily {
    Counts,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub family: PredictorFamily,
    /// Additive smoothing `α` of the count family. Must be positive.
    pub smoothing: f64,
    /// Per-update decay `λ` of a count normalisation group, in (0, 1].
    pub decay: f64,
    /// Step size of the softmax family.
    pub learning_rate: f64,
    /// Updates between snapshot refreshes.
    pub snapshot_period: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            family: PredictorFamily::Counts,
            smoothing: 0.1,
            decay: 0.995,
            learning_rate: 0.5,
            snapshot_period: 10,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing > 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Config(format!(
                "predictor.smoothing must be positive, got {}",
                self.smoothing
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!(
                "predictor.decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "predictor.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.snapshot_period == 0 {
            return Err(Error::Config("predictor.snapshot_period must be at least 1".into()));
        }
        Ok(())
    }

    pub fn build(&self, num_states: usize, num_skills: usize) -> Result<PredictorPair> {
        self.validate()?;
        Ok(match self.family {
            PredictorFamily::Counts => PredictorPair::Counts(CountPredictorPair::new(
                num_states,
                num_skills,
                self.smoothing,
                self.decay,
            )?),
            PredictorFamily::Softmax => PredictorPair::Softmax(SoftmaxPredictorPair::new(
                num_states,
                num_skills,
                self.learning_rate,
            )?),
        })
    }
}

/// Decayed, smoothed co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountPredictorPair {
    num_states: usize,
    num_skills: usize,
    smoothing: f64,
    decay: f64,
    /// `[s0][sT][w]`.
    rel_counts: Vec<f64>,
    /// `[sT][w]`.
    abs_counts: Vec<f64>,
}

impl CountPredictorPair {
    pub fn new(num_states: usize, num_skills: usize, smoothing: f64, decay: f64) -> Result<Self> {
        if num_states == 0 || num_skills == 0 {
            return Err(Error::Config("predictors need at least one state and one skill".into()));
        }
        if smoothing.is_nan() || smoothing <= 0.0 || decay == 0.0 || !(0.0..=1.0).contains(&decay) {
            return Err(Error::Config(format!(
                "count predictors need smoothing > 0 and decay in (0, 1], got {smoothing} / {decay}"
            )));
        }
        Ok(Self {
            num_states,
            num_skills,
            smoothing,
            decay,
            rel_counts: vec![0.0; num_states * num_states * num_skills],
            abs_counts: vec![0.0; num_states * num_skills],
        })
    }

    fn rel_group(&self, s0: StateId, s_t: StateId) -> std::ops::Range<usize> {
        let base = (s0.0 * self.num_states + s_t.0) * self.num_skills;
        base..base + self.num_skills
    }

    fn abs_group(&self, s_t: StateId) -> std::ops::Range<usize> {
        let base = s_t.0 * self.num_skills;
        base..base + self.num_skills
    }

    fn normalise(&self, counts: &[f64]) -> Vec<f64> {
        let total: f64 = counts.iter().sum::<f64>() + self.smoothing * self.num_skills as f64;
        counts.iter().map(|c| (c + self.smoothing) / total).collect()
    }

    pub fn rel_count(&self, skill: SkillId, s0: StateId, s_t: StateId) -> f64 {
        self.rel_counts[self.rel_group(s0, s_t).start + skill.0]
    }

    pub fn abs_count(&self, skill: SkillId, s_t: StateId) -> f64 {
        self.abs_counts[self.abs_group(s_t).start + skill.0]
    }

    /// Overwrites a relative count; used to build fixtures.
    pub fn set_rel_count(&mut self, skill: SkillId, s0: StateId, s_t: StateId, value: f64) {
        let i = self.rel_group(s0, s_t).start + skill.0;
        self.rel_counts[i] = value;
    }

    /// Overwrites an absolute count; used to build fixtures.
    pub fn set_abs_count(&mut self, skill: SkillId, s_t: StateId, value: f64) {
        let i = self.abs_group(s_t).start + skill.0;
        self.abs_counts[i] = value;
    }

    pub fn predict_rel(&self, s0: StateId, s_t: StateId) -> Vec<f64> {
        self.normalise(&self.rel_counts[self.rel_group(s0, s_t)])
    }

    pub fn predict_abs(&self, s_t: StateId) -> Vec<f64> {
        self.normalise(&self.abs_counts[self.abs_group(s_t)])
    }

    pub fn update(&mut self, skill: SkillId, s0: StateId, s_t: StateId) {
        let decay = self.decay;
        let rel = self.rel_group(s0, s_t);
        let abs = self.abs_group(s_t);
        for c in &mut self.rel_counts[rel.clone()] {
            *c *= decay;
        }
        self.rel_counts[rel.start + skill.0] += 1.0;
        for c in &mut self.abs_counts[abs.clone()] {
            *c *= decay;
        }
        self.abs_counts[abs.start + skill.0] += 1.0;
    }
}

/// Softmax heads over one-hot state features.
///
/// The absolute head has one weight per `(skill, sT)`. The relative head acts on
/// the concatenation `[onehot(s0), onehot(sT), onehot(s0, sT)]`; the pair block
/// lets a linear head represent any conditional over `(s0, sT)`, which a purely
/// additive `s0 + sT` head cannot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPredictorPair {
    num_states: usize,
    num_skills: usize,
    learning_rate: f64,
    /// `[w][feature]`, feature count `2N + N^2`.
    rel_weights: Vec<f64>,
    /// `[w][sT]`.
    abs_weights: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits[k] - lse
}

impl SoftmaxPredictorPair {
    pub fn new(num_states: usize, num_skills: usize, learning_rate: f64) -> Result<Self> {
        if num_states == 0 || num_skills == 0 {
            return Err(Error::Config("predictors need at least one state and one skill".into()));
        }
        let features = 2 * num_states + num_states * num_states;
        Ok(Self {
            num_states,
            num_skills,
            learning_rate,
            rel_weights: vec![0.0; num_skills * features],
            abs_weights: vec![0.0; num_skills * num_states],
        })
    }

    pub fn rel_features(&self) -> usize {
        2 * self.num_states + self.num_states * self.num_states
    }

    /// Indices of the three active relative features for `(s0, sT)`.
    fn active_rel(&self, s0: StateId, s_t: StateId) -> [usize; 3] {
        let n = self.num_states;
        [s0.0, n + s_t.0, 2 * n + s0.0 * n + s_t.0]
    }

    pub fn rel_logits(&self, s0: StateId, s_t: StateId) -> Vec<f64> {
        let f = self.rel_features();
        let active = self.active_rel(s0, s_t);
        (0..self.num_skills)
            .map(|k| active.iter().map(|&j| self.rel_weights[k * f + j]).sum())
            .collect()
    }

    pub fn abs_logits(&self, s_t: StateId) -> Vec<f64> {
        (0..self.num_skills)
            .map(|k| self.abs_weights[k * self.num_states + s_t.0])
            .collect()
    }

    pub fn predict_rel(&self, s0: StateId, s_t: StateId) -> Vec<f64> {
        softmax(&self.rel_logits(s0, s_t))
    }

    pub fn predict_abs(&self, s_t: StateId) -> Vec<f64> {
        softmax(&self.abs_logits(s_t))
    }

    pub fn rel_log_likelihood(&self, skill: SkillId, s0: StateId, s_t: StateId) -> f64 {
        log_softmax_at(&self.rel_logits(s0, s_t), skill.0)
    }

    pub fn abs_log_likelihood(&self, skill: SkillId, s_t: StateId) -> f64 {
        log_softmax_at(&self.abs_logits(s_t), skill.0)
    }

    /// Dense gradient of `log q(skill | s0, sT)` with respect to the relative weights.
    pub fn rel_gradient(&self, skill: SkillId, s0: StateId, s_t: StateId) -> Vec<f64> {
        let f = self.rel_features();
        let p = self.predict_rel(s0, s_t);
        let mut g = vec![0.0; self.rel_weights.len()];
        for (k, pk) in p.iter().enumerate() {
            let coef = f64::from(u8::from(k == skill.0)) - pk;
            for j in self.active_rel(s0, s_t) {
                g[k * f + j] += coef;
            }
        }
        g
    }

    /// Dense gradient of `log q_abs(skill | sT)` with respect to the absolute weights.
    pub fn abs_gradient(&self, skill: SkillId, s_t: StateId) -> Vec<f64> {
        let p = self.predict_abs(s_t);
        let mut g = vec![0.0; self.abs_weights.len()];
        for (k, pk) in p.iter().enumerate() {
            g[k * self.num_states + s_t.0] = f64::from(u8::from(k == skill.0)) - pk;
        }
        g
    }

    pub fn rel_weights(&self) -> &[f64] {
        &self.rel_weights
    }

    pub fn rel_weights_mut(&mut self) -> &mut [f64] {
        &mut self.rel_weights
    }

    pub fn abs_weights(&self) -> &[f64] {
        &self.abs_weights
    }

    pub fn abs_weights_mut(&mut self) -> &mut [f64] {
        &mut self.abs_weights
    }

    /// One ascent step on each head's log-likelihood. The heads share only the
    /// fixed one-hot encoding, so their gradients are independent.
    pub fn update(&mut self, skill: SkillId, s0: StateId, s_t: StateId) {
        let f = self.rel_features();
        let eta = self.learning_rate;
        let p = self.predict_rel(s0, s_t);
        let active = self.active_rel(s0, s_t);
        for (k, pk) in p.iter().enumerate() {
            let coef = eta * (f64::from(u8::from(k == skill.0)) - pk);
            for &j in &active {
                self.rel_weights[k * f + j] += coef;
            }
        }
        let p = self.predict_abs(s_t);
        for (k, pk) in p.iter().enumerate() {
            self.abs_weights[k * self.num_states + s_t.0] +=
                eta * (f64::from(u8::from(k == skill.0)) - pk);
        }
    }
}

/// Either predictor family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorPair {
    Counts(CountPredictorPair),
    Softmax(SoftmaxPredictorPair),
}

impl PredictorPair {
    pub fn num_skills(&self) -> usize {
        match self {
            PredictorPair::Counts(p) => p.num_skills,
            PredictorPair::Softmax(p) => p.num_skills,
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            PredictorPair::Counts(p) => p.num_states,
            PredictorPair::Softmax(p) => p.num_states,
        }
    }

    /// `q(· | s0, sT)`.
    pub fn predict_rel(&self, s0: StateId, s_t: StateId) -> Vec<f64> {
        match self {
            PredictorPair::Counts(p) => p.predict_rel(s0, s_t),
            PredictorPair::Softmax(p) => p.predict_rel(s0, s_t),
        }
    }

    /// `q_abs(· | sT)`.
    pub fn predict_abs(&self, s_t: StateId) -> Vec<f64> {
        match self {
            PredictorPair::Counts(p) => p.predict_abs(s_t),
            PredictorPair::Softmax(p) => p.predict_abs(s_t),
        }
    }

    pub fn update(&mut self, skill: SkillId, s0: StateId, s_t: StateId) {
        match self {
            PredictorPair::Counts(p) => p.update(skill, s0, s_t),
            PredictorPair::Softmax(p) => p.update(skill, s0, s_t),
        }
    }
}

/// Reward for a skill episode `(skill, s0, sT)` under the given objective.
pub fn intrinsic_reward(
    predictors: &PredictorPair,
    skill: SkillId,
    s0: StateId,
    s_t: StateId,
    reward_mode: RewardMode,
    baseline_mode: BaselineMode,
) -> f64 {
    let q_rel = predictors.predict_rel(s0, s_t)[skill.0];
    let q_abs = match baseline_mode {
        BaselineMode::Rvic => Some(predictors.predict_abs(s_t)[skill.0]),
        BaselineMode::Vic => None,
    };
    match (reward_mode, q_abs) {
        (RewardMode::ProbDiff, Some(q_abs)) => q_rel - q_abs,
        (RewardMode::ProbDiff, None) => q_rel,
        (RewardMode::LogQ, Some(q_abs)) => q_rel.ln() - q_abs.ln(),
        (RewardMode::LogQ, None) => q_rel.ln(),
    }
}

/// A live predictor pair plus the frozen copy used for rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotPredictors {
    live: PredictorPair,
    snapshot: PredictorPair,
    refresh_period: u64,
    updates: u64,
}

impl SnapshotPredictors {
    pub fn new(live: PredictorPair, refresh_period: u64) -> Result<Self> {
        if refresh_period == 0 {
            return Err(Error::Config("snapshot refresh period must be at least 1".into()));
        }
        Ok(Self {
            snapshot: live.clone(),
            live,
            refresh_period,
            updates: 0,
        })
    }

    pub fn live(&self) -> &PredictorPair {
        &self.live
    }

    pub fn snapshot(&self) -> &PredictorPair {
        &self.snapshot
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Trains the live pair on one skill episode and refreshes the snapshot
    /// when the update counter reaches a multiple of the refresh period.
    pub fn update(&mut self, skill: SkillId, s0: StateId, s_t: StateId) {
        self.live.update(skill, s0, s_t);
        self.updates += 1;
        self.refresh_if_due();
    }

    /// Copies the live pair into the snapshot if `updates` is a multiple of the
    /// refresh period. Returns whether a refresh happened.
    pub fn refresh_if_due(&mut self) -> bool {
        if self.updates > 0 && self.updates.is_multiple_of(self.refresh_period) {
            self.snapshot.clone_from(&self.live);
            true
        } else {
            false
        }
    }

    pub fn reward(
        &self,
        skill: SkillId,
        s0: StateId,
        s_t: StateId,
        reward_mode: RewardMode,
        baseline_mode: BaselineMode,
    ) -> f64 {
        intrinsic_reward(&self.snapshot, skill, s0, s_t, reward_mode, baseline_mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S0: StateId = StateId(0);
    const S1: StateId = StateId(1);

    fn counts(n: usize, k: usize, alpha: f64, decay: f64) -> CountPredictorPair {
        CountPredictorPair::new(n, k, alpha, decay).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn single_skill_predicts_certainty() {
        let p = counts(3, 1, 0.1, 0.995);
        assert_eq!(p.predict_rel(S0, S1), vec![1.0]);
        assert_eq!(p.predict_abs(S1), vec![1.0]);
        let s = SoftmaxPredictorPair::new(3, 1, 0.5).unwrap();
        assert_eq!(s.predict_rel(S0, S1), vec![1.0]);
    }

    #[test]
    fn smoothed_count_arithmetic() {
        let mut p = counts(2, 2, 1.0, 1.0);
        p.set_rel_count(SkillId(0), S0, S1, 3.0);
        p.set_rel_count(SkillId(1), S0, S1, 1.0);
        assert_close(&p.predict_rel(S0, S1), &[4.0 / 6.0, 2.0 / 6.0]);
        p.set_abs_count(SkillId(0), S1, 9.0);
        p.set_abs_count(SkillId(1), S1, 1.0);
        assert_close(&p.predict_abs(S1), &[10.0 / 12.0, 2.0 / 12.0]);
    }

    #[test]
    fn unseen_pairs_are_uniform() {
        let p = counts(5, 4, 0.37, 0.9);
        assert_close(&p.predict_rel(StateId(2), StateId(4)), &[0.25; 4]);
        assert_close(&p.predict_abs(StateId(3)), &[0.25; 4]);
    }

    #[test]
    fn zero_smoothing_is_rejected() {
        assert!(CountPredictorPair::new(2, 2, 0.0, 1.0).is_err());
        assert!(CountPredictorPair::new(2, 2, 0.1, 0.0).is_err());
        assert!(PredictorConfig {
            smoothing: 0.0,
            ..PredictorConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn one_update_concentrates_with_tiny_smoothing() {
        let mut p = counts(3, 4, 1e-9, 0.995);
        p.update(SkillId(2), S0, S1);
        let q = p.predict_rel(S0, S1);
        assert!(q[2] > 1.0 - 1e-8, "{q:?}");
        assert!(p.predict_abs(S1)[2] > 1.0 - 1e-8);
    }

    #[test]
    fn undecayed_counts_are_occurrences() {
        let mut p = counts(3, 2, 0.1, 1.0);
        for _ in 0..5 {
            p.update(SkillId(0), S0, S1);
        }
        for _ in 0..3 {
            p.update(SkillId(1), S0, S1);
        }
        p.update(SkillId(1), StateId(2), S1);
        assert_eq!(p.rel_count(SkillId(0), S0, S1), 5.0);
        assert_eq!(p.rel_count(SkillId(1), S0, S1), 3.0);
        assert_eq!(p.rel_count(SkillId(1), StateId(2), S1), 1.0);
        assert_eq!(p.abs_count(SkillId(1), S1), 4.0);
    }

    #[test]
    fn decayed_counts_converge_to_geometric_limit() {
        // Repeating the same observation n times gives (1 - λ^n) / (1 - λ).
        let lambda = 0.9;
        let mut p = counts(2, 3, 0.01, lambda);
        for _ in 0..200 {
            p.update(SkillId(2), S0, S1);
        }
        let limit = 1.0 / (1.0 - lambda);
        assert!((p.abs_count(SkillId(2), S1) - limit).abs() < 1e-6);
        let q = p.predict_abs(S1);
        let expected = (limit + 0.01) / (limit + 0.03);
        assert!((q[2] - expected).abs() < 1e-6);
        assert!(q[2] > 0.99);
    }

    #[test]
    fn decay_only_touches_the_updated_group() {
        let mut p = counts(3, 2, 0.1, 0.5);
        p.update(SkillId(0), S0, S1);
        p.update(SkillId(1), StateId(2), StateId(2));
        assert_eq!(p.rel_count(SkillId(0), S0, S1), 1.0);
        assert_eq!(p.abs_count(SkillId(0), S1), 1.0);
    }

    #[test]
    fn reward_modes() {
        let mut p = counts(2, 2, 1.0, 1.0);
        // q_rel = [0.8, 0.2] at (s0, s1); q_abs = [0.3, 0.7] at s1.
        p.set_rel_count(SkillId(0), S0, S1, 7.0);
        p.set_rel_count(SkillId(1), S0, S1, 1.0);
        p.set_abs_count(SkillId(0), S1, 2.0);
        p.set_abs_count(SkillId(1), S1, 6.0);
        let pair = PredictorPair::Counts(p);
        let w = SkillId(0);
        let r = intrinsic_reward(&pair, w, S0, S1, RewardMode::ProbDiff, BaselineMode::Rvic);
        assert!((r - 0.5).abs() < 1e-12);
        let r = intrinsic_reward(&pair, w, S0, S1, RewardMode::ProbDiff, BaselineMode::Vic);
        assert!((r - 0.8).abs() < 1e-12);
        let r = intrinsic_reward(&pair, w, S0, S1, RewardMode::LogQ, BaselineMode::Rvic);
        assert!((r - (0.8f64.ln() - 0.3f64.ln())).abs() < 1e-12);
        let r = intrinsic_reward(&pair, w, S0, S1, RewardMode::LogQ, BaselineMode::Vic);
        assert!((r - 0.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_skill_rvic_reward_is_zero() {
        let mut p = PredictorPair::Counts(counts(4, 1, 0.1, 0.995));
        p.update(SkillId(0), S0, S1);
        let r = intrinsic_reward(&p, SkillId(0), S0, S1, RewardMode::ProbDiff, BaselineMode::Rvic);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn snapshot_refresh_schedule() {
        let live = PredictorConfig::default().build(3, 2).unwrap();
        let mut preds = SnapshotPredictors::new(live, 10).unwrap();
        let initial = preds.snapshot().clone();
        for step in 1..=9 {
            preds.update(SkillId(step % 2), S0, S1);
            assert_eq!(preds.snapshot(), &initial, "step {step}");
            assert_ne!(preds.live(), &initial);
        }
        preds.update(SkillId(1), S0, S1);
        assert_eq!(preds.snapshot(), preds.live());
        assert_eq!(preds.updates(), 10);
    }

    #[test]
    fn unit_refresh_period_tracks_live() {
        let live = PredictorConfig::default().build(3, 2).unwrap();
        let mut preds = SnapshotPredictors::new(live, 1).unwrap();
        for step in 0..5 {
            preds.update(SkillId(step % 2), S0, StateId(step % 3));
            assert_eq!(preds.snapshot(), preds.live());
        }
        assert!(SnapshotPredictors::new(preds.live().clone(), 0).is_err());
    }

    #[test]
    fn softmax_update_raises_likelihood() {
        let mut s = SoftmaxPredictorPair::new(4, 3, 0.5).unwrap();
        let before = s.rel_log_likelihood(SkillId(1), S0, S1);
        let before_abs = s.abs_log_likelihood(SkillId(1), S1);
        s.update(SkillId(1), S0, S1);
        assert!(s.rel_log_likelihood(SkillId(1), S0, S1) > before);
        assert!(s.abs_log_likelihood(SkillId(1), S1) > before_abs);
        let q = s.predict_rel(S0, S1);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
