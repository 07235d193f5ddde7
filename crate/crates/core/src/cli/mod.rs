//! Command-line driver.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

pub use config::{ExperimentConfig, GridSpec, SCHEMA_VERSION};

use crate::env::{Env, EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::hrl::{emit_curve_csv, train_hrl, CurveRow, FrozenSkills, MetaConfig};
use crate::metrics::{emit_csv, MetricsRow};
use crate::skills::BaselineMode;
use crate::trainer::{config_hash, load_checkpoint, load_checkpoint_for, save_checkpoint, Trainer};
use crate::ARTIFACT_VERSION;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rvic", version, about = "Tabular VIC / RVIC skill discovery and hierarchical reuse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a skill set and write a checkpoint plus a metrics CSV.
    TrainSkills(TrainSkillsArgs),
    /// Greedy rollouts of a checkpoint from every start: skill map JSON and one metrics row.
    EvalSkills(EvalSkillsArgs),
    /// Train a meta-controller on the goal task with frozen skills (or none).
    TrainHrl(TrainHrlArgs),
    /// Run a grid of hierarchical runs and summarise the best cell per arm.
    Sweep(SweepArgs),
    /// Print an environment's layout.
    DumpLayout(DumpLayoutArgs),
    /// Print the default experiment config.
    DefaultConfig,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Rvic,
    Vic,
}

#[derive(Debug, Args)]
struct TrainSkillsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline_mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total skill episodes.
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (defaults to the config's `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint written with the same effective config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many more skill episodes and checkpoint.
    #[arg(long)]
    stop_after: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalSkillsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// When given, its environment must match the checkpoint's.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainHrlArgs {
    /// Skill checkpoint, or `none` for the primitives-only arm.
    #[arg(long)]
    skills: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    meta_action_cost: Option<f64>,
    #[arg(long)]
    skill_exec_length: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Must not exist or be empty.
    #[arg(long)]
    out: PathBuf,
    /// Run cells concurrently.
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, Args)]
struct DumpLayoutArgs {
    #[arg(long, conflicts_with_all = ["kind", "width", "height"])]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    ToroidalGrid,
    FourRooms,
    TwoJointArm,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Checkpoint { .. } | Error::Inapplicable { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn render(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        let text = s.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
        src = s.source();
    }
    msg
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::TrainSkills(a) => train_skills_cmd(a),
        Command::EvalSkills(a) => eval_skills_cmd(a),
        Command::TrainHrl(a) => train_hrl_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::DumpLayout(a) => dump_layout_cmd(a),
        Command::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml()?);
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

/// The `# ...` line heading every CSV and the `provenance` object in every JSON.
pub fn provenance_line(config_hash: &str, seed: u64) -> String {
    format!("{ARTIFACT_VERSION} config_hash={config_hash} seed={seed}")
}

#[derive(Debug, Serialize)]
struct Provenance<'a> {
    artifact_version: &'a str,
    config_hash: &'a str,
    seed: u64,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn train_skills_cmd(a: TrainSkillsArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(m) = a.baseline_mode {
        cfg.train.skills.baseline_mode = match m {
            Mode::Rvic => BaselineMode::Rvic,
            Mode::Vic => BaselineMode::Vic,
        };
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = a.episodes {
        cfg.train.total_skill_episodes = n;
    }
    if let Some(w) = a.workers {
        cfg.train.workers = w;
    }
    cfg.validate()?;
    let out = a.out.unwrap_or_else(|| cfg.output_dir.clone());
    create_dir(&out)?;
    let ckpt_path = out.join("checkpoint.json");
    let mut trainer = match &a.resume {
        Some(path) => {
            if same_file(path, &ckpt_path) {
                return Err(Error::Config(format!(
                    "--resume {} would be overwritten; pick a different --out",
                    path.display()
                )));
            }
            Trainer::from_checkpoint(load_checkpoint_for(path, &cfg.train)?)?
        }
        None => Trainer::new(cfg.train.clone())?,
    };
    let hash = cfg.train.hash();
    let line = provenance_line(&hash, cfg.train.seed);
    let mut toml_text = format!("# {line}\n");
    toml_text.push_str(&cfg.to_toml()?);
    write_file(&out.join("config.toml"), toml_text.as_bytes())?;
    let metrics_path = out.join("metrics.csv");
    if a.resume.is_none() && metrics_path.exists() {
        std::fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    }
    emit_csv(&[], &metrics_path, Some(&line))?;
    trainer.run_with(
        a.stop_after.unwrap_or(u64::MAX),
        |row| emit_csv(std::slice::from_ref(row), &metrics_path, Some(&line)),
        |_| Ok(()),
    )?;
    save_checkpoint(&trainer.checkpoint(), &ckpt_path)?;
    eprintln!(
        "{} skill episodes done ({} of {}); checkpoint {}",
        trainer.arm(),
        trainer.episodes_done(),
        cfg.train.total_skill_episodes,
        ckpt_path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SkillMapEntry {
    skill: usize,
    start: usize,
    end: usize,
    start_xy: (usize, usize),
    end_xy: (usize, usize),
}

#[derive(Debug, Serialize)]
struct SkillMapFile<'a> {
    provenance: Provenance<'a>,
    arm: &'a str,
    num_skills: usize,
    num_states: usize,
    episode_length: usize,
    episodes_trained: u64,
    entries: Vec<SkillMapEntry>,
}

fn same_env(a: &EnvConfig, b: &EnvConfig) -> bool {
    a.kind == b.kind && a.width == b.width && a.height == b.height
}

fn eval_skills_cmd(a: EvalSkillsArgs) -> Result<()> {
    let cp = load_checkpoint(&a.checkpoint)?;
    if let Some(path) = &a.config {
        let cfg = ExperimentConfig::load(path)?;
        if !same_env(&cfg.train.env, &cp.config.env) {
            return Err(Error::Config(format!(
                "checkpoint was trained on {:?} {}x{} but the config describes {:?} {}x{}",
                cp.config.env.kind,
                cp.config.env.width,
                cp.config.env.height,
                cfg.train.env.kind,
                cfg.train.env.width,
                cfg.train.env.height
            )));
        }
    }
    let hash = cp.config_hash.clone();
    let seed = cp.config.seed;
    let trainer = Trainer::from_checkpoint(cp)?;
    let maps = trainer.skill_maps()?;
    let report = trainer.evaluate()?;
    let env = trainer.env();
    let entries = maps
        .iter()
        .enumerate()
        .flat_map(|(k, map)| {
            map.iter().enumerate().map(move |(s, &e)| (k, s, e))
        })
        .map(|(k, s, e)| SkillMapEntry {
            skill: k,
            start: s,
            end: e.0,
            start_xy: env.coords(crate::env::StateId(s)),
            end_xy: env.coords(e),
        })
        .collect();
    let file = SkillMapFile {
        provenance: Provenance {
            artifact_version: ARTIFACT_VERSION,
            config_hash: &hash,
            seed,
        },
        arm: trainer.arm(),
        num_skills: trainer.config().skills.num_skills,
        num_states: env.num_states(),
        episode_length: trainer.config().skills.episode_length,
        episodes_trained: trainer.episodes_done(),
        entries,
    };
    create_dir(&a.out)?;
    let json = serde_json::to_vec_pretty(&file)?;
    write_file(&a.out.join("skill_map.json"), &json)?;
    let metrics_path = a.out.join("metrics.csv");
    if metrics_path.exists() {
        std::fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    }
    let row = MetricsRow {
        episode: trainer.episodes_done(),
        arm: trainer.arm().to_string(),
        seed,
        report,
    };
    emit_csv(&[row], &metrics_path, Some(&provenance_line(&hash, seed)))
}

/// Loads the skills for an hierarchical arm and picks the environment: the
/// config's when one was given (it must match the checkpoint), else the
/// checkpoint's.
fn hrl_inputs(skills: &str, config: Option<&ExperimentConfig>) -> Result<(FrozenSkills, EnvConfig)> {
    if skills == "none" {
        let env_config = config.map(|c| c.train.env.clone()).unwrap_or_else(|| ExperimentConfig::default().train.env);
        let n = Env::new(env_config.clone())?.num_states();
        return Ok((FrozenSkills::none(n)?, env_config));
    }
    let cp = load_checkpoint(Path::new(skills))?;
    let env_config = match config {
        Some(c) => {
            if !same_env(&c.train.env, &cp.config.env) {
                return Err(Error::Config(format!(
                    "skill checkpoint {skills} was trained on a different environment than the config's"
                )));
            }
            c.train.env.clone()
        }
        None => cp.config.env.clone(),
    };
    Ok((FrozenSkills::from_checkpoint(&cp), env_config))
}

#[derive(Serialize)]
struct HrlIdentity<'a> {
    env: &'a EnvConfig,
    meta: &'a MetaConfig,
    arm: &'a str,
    skills: String,
}

fn hrl_hash(env: &EnvConfig, meta: &MetaConfig, skills: &FrozenSkills) -> String {
    config_hash(&HrlIdentity {
        env,
        meta,
        arm: skills.label(),
        skills: skills.table_hash(),
    })
}

fn train_hrl_cmd(a: TrainHrlArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => Some(ExperimentConfig::load(p)?),
        None => None,
    };
    let mut meta = cfg.as_ref().map(|c| c.hrl.clone()).unwrap_or_default();
    if let Some(c) = a.meta_action_cost {
        meta.meta_action_cost = c;
    }
    if let Some(t) = a.skill_exec_length {
        meta.skill_exec_length = Some(t);
    }
    if let Some(s) = a.seed {
        meta.seed = s;
    }
    if let Some(n) = a.episodes {
        meta.episodes = n;
    }
    meta.validate()?;
    let (skills, env_config) = hrl_inputs(&a.skills, cfg.as_ref())?;
    let out = a
        .out
        .or_else(|| cfg.as_ref().map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("runs"));
    create_dir(&out)?;
    let outcome = train_hrl(&meta, &skills, &env_config)?;
    let path = out.join("curve.csv");
    if path.exists() {
        std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
    }
    let hash = hrl_hash(&env_config, &meta, &skills);
    emit_curve_csv(&outcome.curve, &path, Some(&provenance_line(&hash, meta.seed)))?;
    if let Some(last) = outcome.curve.last() {
        eprintln!(
            "{}: return {:.3}, {:.1} decisions after {} episodes; curve {}",
            last.arm,
            last.return_mean,
            last.decisions_mean,
            last.episodes,
            path.display()
        );
    }
    Ok(())
}

/// One sweep cell's result.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub arm: String,
    pub dir: String,
    pub meta_action_cost: f64,
    pub skill_exec_length: Option<usize>,
    /// Mean over seeds of the last curve point's return.
    pub final_return: f64,
    pub final_decisions: f64,
}

/// Index of the best cell per arm: highest final return, ties to the earliest cell.
pub fn best_cells(cells: &[SweepCell]) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::new();
    for (i, c) in cells.iter().enumerate() {
        match best.iter_mut().find(|b| cells[**b].arm == c.arm) {
            Some(b) => {
                if c.final_return > cells[*b].final_return {
                    *b = i;
                }
            }
            None => best.push(i),
        }
    }
    best
}

fn cell_dir(arm: &str, cost: f64, t: Option<usize>) -> String {
    match t {
        Some(t) => format!("{arm}_c{cost}_t{t}"),
        None => format!("{arm}_c{cost}"),
    }
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let grid = GridSpec::load(&a.grid)?;
    if a.out.exists() {
        let nonempty = std::fs::read_dir(&a.out)
            .map_err(|e| Error::io(&a.out, e))?
            .next()
            .is_some();
        if nonempty {
            return Err(Error::Config(format!(
                "sweep output {} already holds files; refusing to overlap runs",
                a.out.display()
            )));
        }
    }
    let mut arms = Vec::new();
    for (label, path) in &grid.skills {
        let (skills, env) = hrl_inputs(path, Some(&cfg))?;
        let skills = FrozenSkills::new(skills.policy().clone(), skills.trained_length(), label.clone());
        arms.push((label.clone(), skills, env));
    }
    let cells = grid.cells();
    let dirs: Vec<String> = cells.iter().map(|(arm, c, t)| cell_dir(arm, *c, *t)).collect();
    let mut seen = std::collections::BTreeSet::new();
    for d in &dirs {
        if !seen.insert(d) {
            return Err(Error::Config(format!("two sweep cells map to the same directory {d}")));
        }
    }
    create_dir(&a.out)?;
    let run_cell = |i: usize| -> Result<SweepCell> {
        let (arm, cost, t) = &cells[i];
        let (_, skills, env) = arms.iter().find(|(l, _, _)| l == arm).expect("cell arm exists");
        let dir = a.out.join(&dirs[i]);
        create_dir(&dir)?;
        let path = dir.join("curve.csv");
        let (mut ret, mut dec) = (0.0, 0.0);
        for &seed in &grid.seeds {
            let meta = MetaConfig {
                meta_action_cost: *cost,
                skill_exec_length: t.or(cfg.hrl.skill_exec_length),
                seed,
                ..cfg.hrl.clone()
            };
            let outcome = train_hrl(&meta, skills, env)?;
            let hash = hrl_hash(env, &meta, skills);
            emit_curve_csv(&outcome.curve, &path, Some(&provenance_line(&hash, seed)))?;
            let last: &CurveRow = outcome.curve.last().expect("curve has an initial row");
            ret += last.return_mean;
            dec += last.decisions_mean;
        }
        let n = grid.seeds.len() as f64;
        Ok(SweepCell {
            arm: arm.clone(),
            dir: dirs[i].clone(),
            meta_action_cost: *cost,
            skill_exec_length: *t,
            final_return: ret / n,
            final_decisions: dec / n,
        })
    };
    let results: Vec<SweepCell> = if a.parallel {
        (0..cells.len()).into_par_iter().map(run_cell).collect::<Result<_>>()?
    } else {
        (0..cells.len()).map(run_cell).collect::<Result<_>>()?
    };
    let best = best_cells(&results);
    let summary = a.out.join("summary.csv");
    let grid_hash = config_hash(&(&grid, &cfg));
    let mut text = format!("# {}\n", provenance_line(&grid_hash, grid.seeds[0]));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "arm",
        "cell",
        "meta_action_cost",
        "skill_exec_length",
        "final_return",
        "final_decisions",
        "best",
    ])?;
    for (i, c) in results.iter().enumerate() {
        w.write_record([
            c.arm.clone(),
            c.dir.clone(),
            c.meta_action_cost.to_string(),
            c.skill_exec_length.map(|t| t.to_string()).unwrap_or_default(),
            c.final_return.to_string(),
            c.final_decisions.to_string(),
            best.contains(&i).to_string(),
        ])?;
    }
    let body = w.into_inner().map_err(|e| Error::Contract(format!("summary buffer: {e}")))?;
    text.push_str(&String::from_utf8_lossy(&body));
    write_file(&summary, text.as_bytes())?;
    for &i in &best {
        let c = &results[i];
        eprintln!("best {}: {} (final return {:.3})", c.arm, c.dir, c.final_return);
    }
    Ok(())
}

fn dump_layout_cmd(a: DumpLayoutArgs) -> Result<()> {
    let env_config = match (&a.config, a.kind) {
        (Some(p), _) => ExperimentConfig::load(p)?.train.env,
        (None, Some(k)) => {
            let kind = match k {
                Kind::ToroidalGrid => EnvKind::ToroidalGrid,
                Kind::FourRooms => EnvKind::FourRooms,
                Kind::TwoJointArm => EnvKind::TwoJointArm,
            };
            let fixed = kind == EnvKind::FourRooms;
            let dim = |v: Option<usize>| v.unwrap_or(if fixed { crate::env::FOUR_ROOMS_SIZE } else { 8 });
            EnvConfig {
                kind,
                width: dim(a.width),
                height: dim(a.height),
                slip_prob: 0.0,
            }
        }
        (None, None) => ExperimentConfig::default().train.env,
    };
    let env = Env::new(env_config)?;
    print!("{}", env.layout_ascii());
    Ok(())
}
