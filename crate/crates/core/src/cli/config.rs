//! Experiment and sweep-grid files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hrl::MetaConfig;
use crate::trainer::{config_hash, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything one experiment needs. Every key is optional; omitted keys take
/// the values printed by `rvic default-config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub hrl: MetaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            output_dir: PathBuf::from("runs"),
            train: TrainConfig::default(),
            hrl: MetaConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.train.validate()?;
        self.hrl.validate()
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot render config: {e}")))
    }

    /// Parses and validates config text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = parse_toml(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config file. Schema errors name the offending key.
    pub fn load(path: &Path) -> Result<Self> {
        let config: Self = parse_toml_file(path)?;
        config.validate()?;
        Ok(config)
    }
}

pub(crate) fn parse_toml_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_toml(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub(crate) fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().to_string();
        if key.is_empty() || key == "." {
            Error::Config(msg)
        } else {
            Error::Config(format!("at `{key}`: {msg}"))
        }
    })
}

/// A hierarchical-phase sweep: the cross product of arms, meta-action costs
/// and skill execution lengths, each cell run for every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Arm label to skill checkpoint path, or `"none"` for primitives only.
    /// Relative paths are resolved against the grid file's directory.
    pub skills: BTreeMap<String, String>,
    #[serde(default = "default_costs")]
    pub meta_action_cost: Vec<f64>,
    /// Omitted: each arm uses the length its skills were trained with.
    #[serde(default)]
    pub skill_exec_length: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_costs() -> Vec<f64> {
    vec![0.0]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

impl GridSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let mut grid: Self = parse_toml_file(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for v in grid.skills.values_mut() {
            if v != "none" && Path::new(v).is_relative() {
                *v = base.join(&*v).to_string_lossy().into_owned();
            }
        }
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.skills.is_empty() || self.meta_action_cost.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("grid needs at least one arm, cost and seed".into()));
        }
        if self.skill_exec_length.contains(&0) {
            return Err(Error::Config("skill_exec_length values must be >= 1".into()));
        }
        Ok(())
    }

    /// `(arm, cost, exec length)` for every cell, in a fixed order.
    pub fn cells(&self) -> Vec<(String, f64, Option<usize>)> {
        let lengths: Vec<Option<usize>> = if self.skill_exec_length.is_empty() {
            vec![None]
        } else {
            self.skill_exec_length.iter().map(|&t| Some(t)).collect()
        };
        let mut out = Vec::new();
        for arm in self.skills.keys() {
            for &c in &self.meta_action_cost {
                for &t in &lengths {
                    out.push((arm.clone(), c, t));
                }
            }
        }
        out
    }
}
