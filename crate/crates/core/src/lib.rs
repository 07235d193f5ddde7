//! Tabular laboratory for unsupervised skill discovery.
//!
//! Skills are learned with variational intrinsic control (VIC) or its relative
//! variant (RVIC), where the policy is rewarded for being predictable from the
//! `(start, end)` pair of a skill episode but penalised for being predictable
//! from the end state alone. Everything lives on small finite environments so
//! that the information quantities behind the objective can be computed
//! exactly from evaluation rollouts.
//!
//! Module map:
//!
//! * [`env`]: finite environments with known symmetry (torus, four rooms, two-joint arm).
//! * [`skills`]: skill prior, skill-episode rollout, chaining and reward assignment.
//! * [`predictors`]: relative / absolute inverse predictors and the intrinsic reward.
//! * [`policy`]: skill-conditioned tabular Q-learning.
//! * [`trainer`]: the skill-discovery loop and checkpoints.
//! * [`hrl`]: meta-controller over primitive actions and frozen skills.
//! * [`metrics`]: plug-in entropies, mutual informations and skill-geometry scores.
//! * [`cli`]: the experiment driver behind the `rvic` binary.

pub mod cli;
pub mod env;
pub mod error;
pub mod hrl;
pub mod metrics;
pub mod policy;
pub mod predictors;
pub mod skills;
pub mod trainer;

pub use error::{Error, Result};

/// Version string embedded in every artifact this crate writes.
pub const ARTIFACT_VERSION: &str = concat!("rvic ", env!("CARGO_PKG_VERSION"));
