//! Plug-in information quantities and skill-geometry scores.
//!
//! All entropies are maximum-likelihood (plug-in) estimates in bits, computed
//! from exact joint frequency tables of `(skill, s0, sT)` records. Evaluation
//! rollouts enumerate every start state, so the empirical support is complete
//! and no bias correction is applied.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Env, StateId};
use crate::error::{Error, Result};
use crate::skills::{SkillEpisode, SkillId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub skill: SkillId,
    pub start: StateId,
    pub end: StateId,
}

/// A nonempty multiset of `(skill, s0, sT)` records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutSet {
    records: Vec<RolloutRecord>,
}

impl RolloutSet {
    pub fn new(records: Vec<RolloutRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Contract("rollout sets must be nonempty".into()));
        }
        Ok(Self { records })
    }

    /// One record per `(skill, start)` from per-skill start→end maps indexed by start.
    pub fn from_skill_maps(maps: &[Vec<StateId>]) -> Result<Self> {
        let records = maps
            .iter()
            .enumerate()
            .flat_map(|(k, map)| {
                map.iter().enumerate().map(move |(s0, &end)| RolloutRecord {
                    skill: SkillId(k),
                    start: StateId(s0),
                    end,
                })
            })
            .collect();
        Self::new(records)
    }

    /// Reads skill episodes in line-JSON form, keeping `(skill, s0, sT)`.
    pub fn from_episode_lines<R: BufRead>(reader: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io("<rollout stream>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let ep = SkillEpisode::from_json_line(&line)?;
            records.push(RolloutRecord {
                skill: ep.skill,
                start: ep.start(),
                end: ep.end(),
            });
        }
        Self::new(records)
    }

    pub fn records(&self) -> &[RolloutRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks every id against the environment and skill count.
    pub fn check_ranges(&self, num_states: usize, num_skills: usize) -> Result<()> {
        for r in &self.records {
            if r.skill.0 >= num_skills || r.start.0 >= num_states || r.end.0 >= num_states {
                return Err(Error::Contract(format!("rollout record {r:?} out of range")));
            }
        }
        Ok(())
    }
}

/// `H(skill | key)` in bits from `(key, skill)` observations.
///
/// Each conditioning group contributes `Σ_w c_w log2(c / c_w)`, which is a sum
/// of nonnegative terms, so groups with a single skill contribute exactly zero.
fn conditional_entropy<K: Ord + Copy>(pairs: impl Iterator<Item = (K, SkillId)>) -> f64 {
    let mut joint: BTreeMap<(K, SkillId), u64> = BTreeMap::new();
    let mut marginal: BTreeMap<K, u64> = BTreeMap::new();
    let mut n = 0u64;
    for (key, skill) in pairs {
        *joint.entry((key, skill)).or_default() += 1;
        *marginal.entry(key).or_default() += 1;
        n += 1;
    }
    let mut total = 0.0;
    for ((key, _), c) in &joint {
        let group = marginal[key] as f64;
        let c = *c as f64;
        total += c * (group / c).log2();
    }
    total / n as f64
}

/// Plug-in entropies of the skill under each conditioning, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entropies {
    /// `H(w | sT)`.
    pub skill_given_end: f64,
    /// `H(w | sT, s0)`.
    pub skill_given_both: f64,
    /// `H(w | s0)`.
    pub skill_given_start: f64,
    /// `H(w)`.
    pub skill: f64,
}

pub fn plug_in_entropies(rollouts: &RolloutSet) -> Entropies {
    let rs = rollouts.records();
    let skill_given_end = conditional_entropy(rs.iter().map(|r| (r.end, r.skill)));
    let skill_given_start = conditional_entropy(rs.iter().map(|r| (r.start, r.skill)));
    let both = conditional_entropy(rs.iter().map(|r| ((r.end, r.start), r.skill)));
    let skill = conditional_entropy(rs.iter().map(|r| ((), r.skill)));
    Entropies {
        skill_given_end,
        // Conditioning never increases entropy; the min only absorbs rounding.
        skill_given_both: both.min(skill_given_end).min(skill_given_start),
        skill_given_start,
        skill,
    }
}

/// `(I(sT; w | s0), I(s0; w | sT))` in bits.
pub fn mutual_informations(rollouts: &RolloutSet) -> (f64, f64) {
    let h = plug_in_entropies(rollouts);
    (
        h.skill_given_start - h.skill_given_both,
        h.skill_given_end - h.skill_given_both,
    )
}

/// Mean over skills of the largest single-end-state frequency `max_sT p(sT | w)`.
/// Equals 1 exactly when every skill always ends in one fixed state.
pub fn partition_score(rollouts: &RolloutSet) -> f64 {
    modal_fraction(rollouts.records().iter().map(|r| (r.skill, r.end)))
}

/// Mean over skills of the frequency of the most common displacement
/// `(sT - s0) mod dims`. Only defined on torus-family environments.
pub fn relativity_score(rollouts: &RolloutSet, env: &Env) -> Result<f64> {
    if !env.is_torus() {
        return Err(Error::Inapplicable {
            what: "relativity_score",
            env: format!("{:?}", env.config().kind),
        });
    }
    rollouts.check_ranges(env.num_states(), usize::MAX)?;
    let mut keyed = Vec::with_capacity(rollouts.len());
    for r in rollouts.records() {
        keyed.push((r.skill, env.displacement(r.start, r.end)?));
    }
    Ok(modal_fraction(keyed.into_iter()))
}

fn modal_fraction<V: Ord>(items: impl Iterator<Item = (SkillId, V)>) -> f64 {
    let mut per_skill: BTreeMap<SkillId, BTreeMap<V, u64>> = BTreeMap::new();
    for (skill, v) in items {
        *per_skill.entry(skill).or_default().entry(v).or_default() += 1;
    }
    let skills = per_skill.len() as f64;
    per_skill
        .values()
        .map(|hist| {
            let total: u64 = hist.values().sum();
            let max = hist.values().copied().max().unwrap_or(0);
            max as f64 / total as f64
        })
        .sum::<f64>()
        / skills
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `I(sT; w | s0)`, the VIC objective.
    pub mi_end_given_start: f64,
    /// `I(s0; w | sT)`, what the relative objective targets.
    pub mi_start_given_end: f64,
    pub h_skill_given_end: f64,
    pub h_skill_given_both: f64,
    pub partition_score: f64,
    /// `None` outside torus-family environments.
    pub relativity_score: Option<f64>,
}

impl MetricsReport {
    pub fn compute(rollouts: &RolloutSet, env: &Env) -> Result<Self> {
        let h = plug_in_entropies(rollouts);
        Ok(Self {
            mi_end_given_start: h.skill_given_start - h.skill_given_both,
            mi_start_given_end: h.skill_given_end - h.skill_given_both,
            h_skill_given_end: h.skill_given_end,
            h_skill_given_both: h.skill_given_both,
            partition_score: partition_score(rollouts),
            relativity_score: if env.is_torus() {
                Some(relativity_score(rollouts, env)?)
            } else {
                None
            },
        })
    }
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: u64,
    pub arm: String,
    pub seed: u64,
    #[serde(flatten)]
    pub report: MetricsReport,
}

pub const METRICS_HEADER: [&str; 9] = [
    "episode",
    "arm",
    "seed",
    "mi_end_given_start",
    "mi_start_given_end",
    "h_skill_given_end",
    "h_skill_given_both",
    "partition_score",
    "relativity_score",
];

impl MetricsRow {
    fn fields(&self) -> [String; 9] {
        let r = &self.report;
        [
            self.episode.to_string(),
            self.arm.clone(),
            self.seed.to_string(),
            r.mi_end_given_start.to_string(),
            r.mi_start_given_end.to_string(),
            r.h_skill_given_end.to_string(),
            r.h_skill_given_both.to_string(),
            r.partition_score.to_string(),
            r.relativity_score.map(|v| v.to_string()).unwrap_or_default(),
        ]
    }
}

/// Appends rows to a metrics CSV, writing the header (preceded by an optional
/// `#` comment line) when the file is new or empty. Numbers use Rust's
/// shortest round-trip formatting, which is locale independent.
pub fn emit_csv(rows: &[MetricsRow], path: &Path, comment: Option<&str>) -> Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let fresh = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
    let mut file = std::io::BufWriter::new(file);
    if fresh {
        if let Some(c) = comment {
            writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
        }
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(METRICS_HEADER)?;
    }
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Parses a metrics CSV written by [`emit_csv`]; `#` lines are skipped.
pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let parse = |s: &str, col: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Contract(format!("{}: column {col}: {e}", path.display())))
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != METRICS_HEADER.len() {
            return Err(Error::Contract(format!(
                "{}: expected {} columns, found {}",
                path.display(),
                METRICS_HEADER.len(),
                rec.len()
            )));
        }
        let int = |i: usize| -> Result<u64> {
            rec[i].parse::<u64>().map_err(|e| {
                Error::Contract(format!("{}: column {}: {e}", path.display(), METRICS_HEADER[i]))
            })
        };
        rows.push(MetricsRow {
            episode: int(0)?,
            arm: rec[1].to_string(),
            seed: int(2)?,
            report: MetricsReport {
                mi_end_given_start: parse(&rec[3], METRICS_HEADER[3])?,
                mi_start_given_end: parse(&rec[4], METRICS_HEADER[4])?,
                h_skill_given_end: parse(&rec[5], METRICS_HEADER[5])?,
                h_skill_given_both: parse(&rec[6], METRICS_HEADER[6])?,
                partition_score: parse(&rec[7], METRICS_HEADER[7])?,
                relativity_score: if rec[8].is_empty() {
                    None
                } else {
                    Some(parse(&rec[8], METRICS_HEADER[8])?)
                },
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;

    fn torus(w: usize, h: usize) -> Env {
        Env::new(EnvConfig::toroidal_grid(w, h)).unwrap()
    }

    /// Skill k moves every start by `offsets[k]`.
    fn translation_set(env: &Env, offsets: &[(usize, usize)]) -> RolloutSet {
        let (w, h) = env.dims();
        let maps: Vec<Vec<StateId>> = offsets
            .iter()
            .map(|&(dx, dy)| {
                env.states()
                    .map(|s| {
                        let (x, y) = env.coords(s);
                        env.state_at((x + dx) % w, (y + dy) % h).unwrap()
                    })
                    .collect()
            })
            .collect();
        RolloutSet::from_skill_maps(&maps).unwrap()
    }

    fn constant_set(env: &Env, k: usize, target: StateId) -> RolloutSet {
        let maps = vec![vec![target; env.num_states()]; k];
        RolloutSet::from_skill_maps(&maps).unwrap()
    }

    #[test]
    fn single_skill_entropies_vanish() {
        let env = torus(4, 4);
        let set = translation_set(&env, &[(1, 0)]);
        let h = plug_in_entropies(&set);
        assert_eq!((h.skill_given_end, h.skill_given_both, h.skill_given_start, h.skill), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(mutual_informations(&set), (0.0, 0.0));
    }

    #[test]
    fn translation_skills_are_relative() {
        let env = torus(8, 8);
        let set = translation_set(&env, &[(1, 0), (0, 1), (7, 0), (0, 7)]);
        let h = plug_in_entropies(&set);
        assert_eq!(h.skill_given_end, 2.0);
        assert_eq!(h.skill_given_both, 0.0);
        let (mi_end, mi_start) = mutual_informations(&set);
        assert_eq!(mi_start, 2.0);
        assert_eq!(mi_end, 2.0);
        assert_eq!(partition_score(&set), 1.0 / 64.0);
        assert_eq!(relativity_score(&set, &env).unwrap(), 1.0);
    }

    #[test]
    fn constant_skills_carry_no_information() {
        let env = torus(8, 8);
        let set = constant_set(&env, 4, StateId(17));
        let h = plug_in_entropies(&set);
        assert_eq!(h.skill_given_end, 2.0);
        assert_eq!(h.skill_given_both, 2.0);
        assert_eq!(mutual_informations(&set), (0.0, 0.0));
        assert_eq!(partition_score(&set), 1.0);
        assert_eq!(relativity_score(&set, &env).unwrap(), 1.0 / 64.0);
    }

    #[test]
    fn partitioning_skills_hit_the_vic_optimum() {
        // Each skill goes to its own fixed state: perfectly decodable from sT alone.
        let maps: Vec<Vec<StateId>> = (0..4).map(|k| vec![StateId(k * 3); 16]).collect();
        let set = RolloutSet::from_skill_maps(&maps).unwrap();
        let (mi_end, mi_start) = mutual_informations(&set);
        assert_eq!(mi_end, 2.0);
        assert_eq!(mi_start, 0.0);
        assert_eq!(partition_score(&set), 1.0);
    }

    #[test]
    fn mixed_partition_score() {
        let env = torus(2, 2);
        let mut maps = vec![vec![StateId(0); 4]];
        maps.push(env.states().map(|s| env.transition(s, crate::env::ActionId::RIGHT)).collect());
        let set = RolloutSet::from_skill_maps(&maps).unwrap();
        assert_eq!(partition_score(&set), 0.625);
    }

    #[test]
    fn relativity_needs_a_torus() {
        let env = Env::new(EnvConfig::four_rooms()).unwrap();
        let set = constant_set(&env, 2, StateId(0));
        assert!(matches!(relativity_score(&set, &env), Err(Error::Inapplicable { .. })));
        let report = MetricsReport::compute(&set, &env).unwrap();
        assert_eq!(report.relativity_score, None);
    }

    #[test]
    fn empty_sets_are_rejected() {
        assert!(RolloutSet::new(vec![]).is_err());
    }

    #[test]
    fn label_permutation_invariance() {
        let env = torus(5, 5);
        let set = translation_set(&env, &[(1, 0), (1, 0), (0, 2), (3, 3)]);
        let perm = [2usize, 0, 3, 1];
        let permuted = RolloutSet::new(
            set.records()
                .iter()
                .map(|r| RolloutRecord { skill: SkillId(perm[r.skill.0]), ..*r })
                .collect(),
        )
        .unwrap();
        assert_eq!(
            MetricsReport::compute(&set, &env).unwrap(),
            MetricsReport::compute(&permuted, &env).unwrap()
        );
    }

    #[test]
    fn episode_lines_feed_rollout_sets() {
        let ep = SkillEpisode {
            skill: SkillId(1),
            states: vec![StateId(0), StateId(1), StateId(2)],
            actions: vec![crate::env::ActionId::RIGHT; 2],
            rewards: vec![0.0; 2],
            discounts: vec![0.9, 0.0],
        };
        let text = format!("{}\n\n{}\n", ep.to_json_line().unwrap(), ep.to_json_line().unwrap());
        let set = RolloutSet::from_episode_lines(text.as_bytes()).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.records()[0], RolloutRecord { skill: SkillId(1), start: StateId(0), end: StateId(2) });
    }

    fn row(episode: u64) -> MetricsRow {
        MetricsRow {
            episode,
            arm: "rvic".into(),
            seed: 3,
            report: MetricsReport {
                mi_end_given_start: 1.2345678901234567,
                mi_start_given_end: 0.1 + 0.2,
                h_skill_given_end: 2.0,
                h_skill_given_both: 1e-17,
                partition_score: 1.0 / 3.0,
                relativity_score: Some(0.625),
            },
        }
    }

    #[test]
    fn csv_header_only_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        emit_csv(&[], &path, None).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.trim_end(), METRICS_HEADER.join(","));

        let path = dir.path().join("n.csv");
        emit_csv(&[row(10), row(20)], &path, None).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
        let back = read_csv(&path).unwrap();
        assert_eq!(back, vec![row(10), row(20)]);
    }

    #[test]
    fn csv_appends_without_repeating_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        emit_csv(&[row(1)], &path, Some("rvic 0.1.0 config_hash=abc seed=3")).unwrap();
        emit_csv(&[row(2)], &path, Some("ignored")).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("# rvic"));
        assert_eq!(read_csv(&path).unwrap().len(), 2);
    }

    #[test]
    fn csv_unwritable_path_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("m.csv");
        assert!(matches!(emit_csv(&[], &path, None), Err(Error::Io { .. })));
    }
}
