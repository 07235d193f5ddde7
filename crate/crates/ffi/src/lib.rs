//! C ABI over the `rvic` library.
//!
//! Every function returns an [`RvicStatus`]; outputs go through pointer
//! arguments. On failure the message is kept per thread and can be read with
//! [`rvic_last_error`]. Handles are opaque and must be released with the
//! matching `*_free` function. Panics never cross the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvic::cli::ExperimentConfig;
use rvic::env::{ActionId, Env, EnvConfig, EnvKind, StateId};
use rvic::metrics::{MetricsReport, RolloutRecord, RolloutSet};
use rvic::skills::SkillId;
use rvic::trainer::{load_checkpoint, save_checkpoint, Trainer};
use rvic::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RvicStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Contract = 4,
    Checkpoint = 5,
    Io = 6,
    Inapplicable = 7,
    Panic = 8,
}

/// Environment kinds accepted by [`rvic_env_new`].
pub const RVIC_ENV_TOROIDAL_GRID: u32 = 0;
pub const RVIC_ENV_FOUR_ROOMS: u32 = 1;
pub const RVIC_ENV_TWO_JOINT_ARM: u32 = 2;

/// Skill-set metrics. `relativity_score` is only meaningful when
/// `has_relativity` is nonzero.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RvicMetrics {
    pub mi_end_given_start: f64,
    pub mi_start_given_end: f64,
    pub h_skill_given_end: f64,
    pub h_skill_given_both: f64,
    pub partition_score: f64,
    pub relativity_score: f64,
    pub has_relativity: u8,
}

impl From<MetricsReport> for RvicMetrics {
    fn from(r: MetricsReport) -> Self {
        Self {
            mi_end_given_start: r.mi_end_given_start,
            mi_start_given_end: r.mi_start_given_end,
            h_skill_given_end: r.h_skill_given_end,
            h_skill_given_both: r.h_skill_given_both,
            partition_score: r.partition_score,
            relativity_score: r.relativity_score.unwrap_or(0.0),
            has_relativity: r.relativity_score.is_some() as u8,
        }
    }
}

/// An environment plus the rng its resets and slips draw from.
pub struct RvicEnv {
    env: Env,
    rng: ChaCha8Rng,
}

/// A skill-discovery run.
pub struct RvicTrainer {
    trainer: Trainer,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> RvicStatus {
    match e {
        Error::Config(_) => RvicStatus::Config,
        Error::Checkpoint { .. } => RvicStatus::Checkpoint,
        Error::Io { .. } => RvicStatus::Io,
        Error::Inapplicable { .. } => RvicStatus::Inapplicable,
        Error::Training { source, .. } => status_of(source),
        _ => RvicStatus::Contract,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RvicStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RvicStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            RvicStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            RvicStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RvicStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("`{what}` is not valid UTF-8")))
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rvic_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rvic_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Creates an environment. `kind` is one of the `RVIC_ENV_*` constants; the
/// rng used by resets and slips is seeded with `seed`.
#[no_mangle]
pub unsafe extern "C" fn rvic_env_new(
    kind: u32,
    width: usize,
    height: usize,
    slip_prob: f64,
    seed: u64,
    out: *mut *mut RvicEnv,
) -> RvicStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let kind = match kind {
            RVIC_ENV_TOROIDAL_GRID => EnvKind::ToroidalGrid,
            RVIC_ENV_FOUR_ROOMS => EnvKind::FourRooms,
            RVIC_ENV_TWO_JOINT_ARM => EnvKind::TwoJointArm,
            k => return Err(Fail::Arg(format!("unknown environment kind {k}"))),
        };
        let env = Env::new(EnvConfig {
            kind,
            width,
            height,
            slip_prob,
        })?;
        *out = Box::into_raw(Box::new(RvicEnv {
            env,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rvic_env_free(env: *mut RvicEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

#[no_mangle]
pub unsafe extern "C" fn rvic_env_num_states(env: *const RvicEnv, out: *mut usize) -> RvicStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(env, "env")?.env.num_states();
        Ok(())
    })
}

/// Draws a start state uniformly.
#[no_mangle]
pub unsafe extern "C" fn rvic_env_reset(env: *mut RvicEnv, out_state: *mut usize) -> RvicStatus {
    guard(|| {
        let h = deref_mut(env, "env")?;
        let out = deref_mut(out_state, "out_state")?;
        *out = h.env.reset(&mut h.rng).0;
        Ok(())
    })
}

/// One step. Outputs may not be null.
#[no_mangle]
pub unsafe extern "C" fn rvic_env_step(
    env: *mut RvicEnv,
    state: usize,
    action: usize,
    out_next: *mut usize,
    out_reward: *mut f64,
    out_terminal: *mut u8,
) -> RvicStatus {
    guard(|| {
        let h = deref_mut(env, "env")?;
        let next = deref_mut(out_next, "out_next")?;
        let reward = deref_mut(out_reward, "out_reward")?;
        let terminal = deref_mut(out_terminal, "out_terminal")?;
        let o = h.env.step(StateId(state), ActionId(action), &mut h.rng)?;
        *next = o.next_state.0;
        *reward = o.extrinsic_reward;
        *terminal = o.terminal as u8;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rvic_env_coords(
    env: *const RvicEnv,
    state: usize,
    out_x: *mut usize,
    out_y: *mut usize,
) -> RvicStatus {
    guard(|| {
        let h = deref(env, "env")?;
        let x = deref_mut(out_x, "out_x")?;
        let y = deref_mut(out_y, "out_y")?;
        h.env.check_state(StateId(state))?;
        (*x, *y) = h.env.coords(StateId(state));
        Ok(())
    })
}

/// Creates a trainer from experiment-config TOML text (its `[train]` section is used).
#[no_mangle]
pub unsafe extern "C" fn rvic_trainer_new_from_toml(
    toml: *const c_char,
    out: *mut *mut RvicTrainer,
) -> RvicStatus {
    guard(|| {
        let text = string(toml, "toml")?;
        let out = deref_mut(out, "out")?;
        let cfg = ExperimentConfig::from_toml_str(text)?;
        let trainer = Trainer::new(cfg.train)?;
        *out = Box::into_raw(Box::new(RvicTrainer { trainer }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rvic_trainer_free(trainer: *mut RvicTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

/// Runs up to `max_episodes` more skill episodes; `out_done` (may be null)
/// receives the total completed so far.
#[no_mangle]
pub unsafe extern "C" fn rvic_trainer_run(
    trainer: *mut RvicTrainer,
    max_episodes: u64,
    out_done: *mut u64,
) -> RvicStatus {
    guard(|| {
        let t = deref_mut(trainer, "trainer")?;
        t.trainer.run_with(max_episodes, |_| Ok(()), |_| Ok(()))?;
        if let Some(done) = out_done.as_mut() {
            *done = t.trainer.episodes_done();
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rvic_trainer_evaluate(
    trainer: *const RvicTrainer,
    out: *mut RvicMetrics,
) -> RvicStatus {
    guard(|| {
        let t = deref(trainer, "trainer")?;
        let out = deref_mut(out, "out")?;
        *out = t.trainer.evaluate()?.into();
        Ok(())
    })
}

/// Greedy end state of `skill` from every start; `out_ends` must hold
/// `len >= num_states` entries.
#[no_mangle]
pub unsafe extern "C" fn rvic_trainer_skill_map(
    trainer: *const RvicTrainer,
    skill: usize,
    out_ends: *mut usize,
    len: usize,
) -> RvicStatus {
    guard(|| {
        let t = deref(trainer, "trainer")?;
        if out_ends.is_null() {
            return Err(Fail::Null("out_ends"));
        }
        let k = t.trainer.config().skills.num_skills;
        if skill >= k {
            return Err(Fail::Arg(format!("skill {skill} out of range [0, {k})")));
        }
        let n = t.trainer.env().num_states();
        if len < n {
            return Err(Fail::Arg(format!("buffer holds {len} entries, need {n}")));
        }
        let map = rvic::policy::evaluate_skill_map(
            t.trainer.policy(),
            &Env::new(EnvConfig {
                slip_prob: 0.0,
                ..t.trainer.config().env.clone()
            })?,
            SkillId(skill),
            t.trainer.config().skills.episode_length,
        )?;
        let out = std::slice::from_raw_parts_mut(out_ends, len);
        for (o, s) in out.iter_mut().zip(map) {
            *o = s.0;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rvic_trainer_save_checkpoint(
    trainer: *const RvicTrainer,
    path: *const c_char,
) -> RvicStatus {
    guard(|| {
        let t = deref(trainer, "trainer")?;
        let path = string(path, "path")?;
        save_checkpoint(&t.trainer.checkpoint(), Path::new(path))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rvic_trainer_load_checkpoint(
    path: *const c_char,
    out: *mut *mut RvicTrainer,
) -> RvicStatus {
    guard(|| {
        let path = string(path, "path")?;
        let out = deref_mut(out, "out")?;
        let trainer = Trainer::from_checkpoint(load_checkpoint(Path::new(path))?)?;
        *out = Box::into_raw(Box::new(RvicTrainer { trainer }));
        Ok(())
    })
}

/// Metrics of `n` rollouts given as parallel arrays. `env` supplies the
/// geometry for the relativity score.
#[no_mangle]
pub unsafe extern "C" fn rvic_metrics_from_arrays(
    env: *const RvicEnv,
    skills: *const usize,
    starts: *const usize,
    ends: *const usize,
    n: usize,
    out: *mut RvicMetrics,
) -> RvicStatus {
    guard(|| {
        let h = deref(env, "env")?;
        let out = deref_mut(out, "out")?;
        if skills.is_null() || starts.is_null() || ends.is_null() {
            return Err(Fail::Null("skills/starts/ends"));
        }
        if n == 0 {
            return Err(Fail::Arg("need at least one rollout".into()));
        }
        let (w, s, e) = (
            std::slice::from_raw_parts(skills, n),
            std::slice::from_raw_parts(starts, n),
            std::slice::from_raw_parts(ends, n),
        );
        let records = (0..n)
            .map(|i| RolloutRecord {
                skill: SkillId(w[i]),
                start: StateId(s[i]),
                end: StateId(e[i]),
            })
            .collect();
        let set = RolloutSet::new(records)?;
        let k = w.iter().max().map_or(0, |m| m + 1);
        set.check_ranges(h.env.num_states(), k)?;
        *out = MetricsReport::compute(&set, &h.env)?.into();
        Ok(())
    })
}
