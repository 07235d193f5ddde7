use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rvic::cli::ExperimentConfig;
use rvic::env::{StateId, NUM_ACTIONS};
use rvic::skills::{BaselineMode, SkillId};
use rvic::trainer::{save_checkpoint, Trainer};

const SMALL: &str = r#"
[train]
total_skill_episodes = 300
eval_every = 100
seed = 4

[train.env]
kind = "toroidal_grid"
width = 5
height = 5

[train.skills]
num_skills = 3
episode_length = 2

[hrl]
goal = [0, 0]
start_min_chebyshev = 1
episodes = 20
eval_every = 10
step_cap = 60
"#;

fn rvic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvic")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = rvic(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("small.toml");
        fs::write(&config, SMALL).unwrap();
        Self { dir, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(out);
        let mut args = vec!["train-skills", "--config", s(&self.config), "--out", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }
}

/// CSV rows after the provenance comment, as header-keyed maps.
fn read_csv(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    assert!(text.starts_with("# rvic "), "{text}");
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

fn written_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&fs::read_to_string(dir.join("config.toml")).unwrap()).unwrap()
}

#[test]
fn missing_config_exits_with_the_config_code() {
    let out = rvic(&["train-skills", "--config", "/no/such/file.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/file.toml"));
}

#[test]
fn unknown_keys_name_their_path() {
    let f = Fixture::new();
    let bad = f.path("bad.toml");
    fs::write(&bad, "[train.skills]\nnum_skils = 3\n").unwrap();
    let out = rvic(&["train-skills", "--config", s(&bad), "--out", s(&f.path("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.skills") && err.contains("num_skils"), "{err}");
}

#[test]
fn bad_flags_and_help() {
    assert_eq!(rvic(&["train-skills", "--bogus"]).status.code(), Some(2));
    assert_eq!(rvic(&["--help"]).status.code(), Some(0));
}

#[test]
fn default_config_has_sixteen_skills_and_parses() {
    let out = ok(&["default-config"]);
    let cfg = ExperimentConfig::from_toml_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.train.skills.num_skills, 16);
}

#[test]
fn baseline_flag_changes_only_the_baseline() {
    let f = Fixture::new();
    let base = ExperimentConfig::from_toml_str(SMALL).unwrap();
    assert_eq!(base.train.skills.baseline_mode, BaselineMode::Rvic);
    let out = f.train("vic", &["--baseline-mode", "vic", "--episodes", "10"]);
    let mut expected = base;
    expected.train.skills.baseline_mode = BaselineMode::Vic;
    expected.train.total_skill_episodes = 10;
    assert_eq!(written_config(&out), expected);
    assert!(fs::read_to_string(out.join("config.toml")).unwrap().starts_with("# rvic "));
    let rows = read_csv(&out.join("metrics.csv"));
    assert!(rows.iter().all(|r| r["arm"] == "vic"));
}

#[test]
fn eval_lists_every_skill_and_start_and_is_repeatable() {
    let f = Fixture::new();
    let run = f.train("run", &[]);
    let ck = run.join("checkpoint.json");
    let (a, b) = (f.path("eval_a"), f.path("eval_b"));
    ok(&["eval-skills", "--checkpoint", s(&ck), "--out", s(&a)]);
    ok(&["eval-skills", "--checkpoint", s(&ck), "--out", s(&b)]);
    let map: serde_json::Value = serde_json::from_slice(&fs::read(a.join("skill_map.json")).unwrap()).unwrap();
    assert_eq!(map["entries"].as_array().unwrap().len(), 3 * 25);
    assert_eq!(map["provenance"]["seed"], 4);
    for name in ["skill_map.json", "metrics.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let rows = read_csv(&a.join("metrics.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["episode"], "300");
}

#[test]
fn eval_refuses_a_mismatched_environment() {
    let f = Fixture::new();
    let run = f.train("run", &["--episodes", "5"]);
    let other = f.path("other.toml");
    fs::write(&other, SMALL.replace("width = 5", "width = 6")).unwrap();
    let out = rvic(&[
        "eval-skills",
        "--checkpoint",
        s(&run.join("checkpoint.json")),
        "--config",
        s(&other),
        "--out",
        s(&f.path("e")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn constant_action_skills_score_full_relativity() {
    let f = Fixture::new();
    let cfg = ExperimentConfig::from_toml_str(SMALL).unwrap();
    let mut cp = Trainer::new(cfg.train).unwrap().checkpoint();
    for w in 0..3 {
        for st in 0..25 {
            let row = cp.state.policy.row_mut(SkillId(w), StateId(st));
            assert_eq!(row.len(), NUM_ACTIONS);
            row[w + 1] = 1.0;
        }
    }
    let ck = f.path("translation.json");
    save_checkpoint(&cp, &ck).unwrap();
    let out = f.path("eval");
    ok(&["eval-skills", "--checkpoint", s(&ck), "--out", s(&out)]);
    let rows = read_csv(&out.join("metrics.csv"));
    assert_eq!(rows[0]["relativity_score"].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn primitive_arm_is_labelled() {
    let f = Fixture::new();
    let out = f.path("hrl");
    ok(&["train-hrl", "--skills", "none", "--config", s(&f.config), "--out", s(&out)]);
    let rows = read_csv(&out.join("curve.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["arm"] == "primitive"));
    assert_eq!(rows[0]["episodes"], "0");
}

#[test]
fn sweep_values_are_accepted() {
    let f = Fixture::new();
    let run = f.train("run", &["--episodes", "50"]);
    let ck = run.join("checkpoint.json");
    for cost in ["0.0", "0.1", "0.15"] {
        for len in ["10", "15", "25"] {
            let out = f.path(&format!("h_{cost}_{len}"));
            ok(&[
                "train-hrl",
                "--skills",
                s(&ck),
                "--config",
                s(&f.config),
                "--meta-action-cost",
                cost,
                "--skill-exec-length",
                len,
                "--episodes",
                "4",
                "--out",
                s(&out),
            ]);
            assert!(read_csv(&out.join("curve.csv")).iter().all(|r| r["arm"] == "rvic"));
        }
    }
}

fn write_grid(f: &Fixture, ck: &Path) -> PathBuf {
    let grid = f.path("grid.toml");
    fs::write(
        &grid,
        format!(
            "meta_action_cost = [0.0, 0.1]\nskill_exec_length = [1, 2, 3]\nseeds = [0, 1]\n\n[skills]\nrvic = \"{}\"\n",
            ck.file_name().unwrap().to_str().unwrap()
        ),
    )
    .unwrap();
    grid
}

#[test]
fn sweep_writes_every_cell_and_a_summary() {
    let f = Fixture::new();
    let run = f.train("run", &["--episodes", "200"]);
    let ck = f.path("skills.json");
    fs::copy(run.join("checkpoint.json"), &ck).unwrap();
    let grid = write_grid(&f, &ck);
    let a = f.path("sweep_a");
    ok(&["sweep", "--grid", s(&grid), "--config", s(&f.config), "--out", s(&a)]);

    let rows = read_csv(&a.join("summary.csv"));
    assert_eq!(rows.len(), 6);
    for r in &rows {
        let curve = read_csv(&a.join(&r["cell"]).join("curve.csv"));
        assert_eq!(curve.iter().filter(|c| c["seed"] == "0").count(), 3);
        assert_eq!(curve.iter().filter(|c| c["seed"] == "1").count(), 3);
    }
    let returns: Vec<f64> = rows.iter().map(|r| r["final_return"].parse().unwrap()).collect();
    let best = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first_best = returns.iter().position(|&r| r == best).unwrap();
    let flagged: Vec<usize> = (0..rows.len()).filter(|&i| rows[i]["best"] == "true").collect();
    assert_eq!(flagged, vec![first_best]);

    let b = f.path("sweep_b");
    ok(&["sweep", "--grid", s(&grid), "--config", s(&f.config), "--out", s(&b), "--parallel"]);
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());
    for r in &rows {
        let name = Path::new(&r["cell"]).join("curve.csv");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }

    let again = rvic(&["sweep", "--grid", s(&grid), "--config", s(&f.config), "--out", s(&a)]);
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let f = Fixture::new();
    let full = f.train("full", &[]);
    let part = f.train("part", &["--stop-after", "130"]);
    let resume_from = part.join("checkpoint.json");
    let resumed = f.train("resumed", &["--resume", s(&resume_from)]);
    assert_eq!(
        fs::read(full.join("checkpoint.json")).unwrap(),
        fs::read(resumed.join("checkpoint.json")).unwrap()
    );
    let tail: Vec<_> = read_csv(&full.join("metrics.csv")).into_iter().filter(|r| r["episode"] != "100").collect();
    assert_eq!(read_csv(&resumed.join("metrics.csv")), tail);

    let clash = rvic(&[
        "train-skills",
        "--config",
        s(&f.config),
        "--out",
        s(&part),
        "--resume",
        s(&resume_from),
    ]);
    assert_eq!(clash.status.code(), Some(2));
}
