//! Behavior of the command line contract: option precedence, strict config
//! parsing, report schemas, figure byte stability, and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_snakelab"));
    c.env_remove("SNAKELAB_SEED");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn json_report(dir: &Path, name: &str) -> serde_json::Value {
    let bytes = std::fs::read(dir.join(name)).expect("report exists");
    serde_json::from_slice(&bytes).expect("valid json")
}

#[test]
fn cli_overrides_file_overrides_default() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.toml"), "seed = 5\n\n[sample-excursion]\nreps = 2\n")
        .unwrap();

    let out = run(
        &["sample-excursion", "--config", "cfg.toml", "--seed", "9", "--dt", "1e-3", "--out", "a"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let r = json_report(&dir.path().join("a"), "sample-excursion.json");
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["seed"], 9);
    assert_eq!(r["config"]["sample_excursion"]["reps"], 2);

    let out = run(
        &["sample-excursion", "--config", "cfg.toml", "--dt", "1e-3", "--out", "b"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let r = json_report(&dir.path().join("b"), "sample-excursion.json");
    assert_eq!(r["seed"], 5);
}

#[test]
fn env_seed_is_the_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sample-excursion", "--reps", "1", "--dt", "1e-3", "--out", "e"])
        .env("SNAKELAB_SEED", "77")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json_report(&dir.path().join("e"), "sample-excursion.json")["seed"], 77);

    let out = bin()
        .args(["sample-excursion", "--reps", "1", "--dt", "1e-3", "--seed", "3", "--out", "f"])
        .env("SNAKELAB_SEED", "77")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json_report(&dir.path().join("f"), "sample-excursion.json")["seed"], 3);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "bogus_key = 1\n").unwrap();
    let out = run(&["verify-mass", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));

    std::fs::write(dir.path().join("bad2.toml"), "[verify-mass]\nmystery = 1\n").unwrap();
    let out = run(&["verify-mass", "--config", "bad2.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
}

#[test]
fn resolution_flags_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate-forward", "--eps", "0.5", "--gamma", "9.0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("disagree"), "stderr: {err}");

    // h = eps/2 and gamma = 4/eps name the same value, so this agrees.
    let out = run(
        &["simulate-forward", "--eps", "0.5", "--h", "0.25", "--gamma", "8.0", "--reps", "10", "--out", "g"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn invalid_parameters_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["verify-identity", "--ctilde", "0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ctilde"));

    let out = run(&["verify-mass", "--workers", "0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("workers"));
}

#[test]
fn csv_reports_use_the_fixed_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["simulate-forward", "--reps", "20", "--seed", "1", "--out", "c"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("c/simulate-forward.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("seed,replicate,time,component,count,scaled_mass"));
    let first = lines.next().expect("has rows");
    assert!(first.starts_with("1,0,0.5,forward_"), "row: {first}");
}

#[test]
fn truncation_over_budget_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.toml"), "[sample-excursion]\nmax_points = 500\n").unwrap();
    let out = run(
        &["sample-excursion", "--config", "t.toml", "--reps", "4", "--seed", "2", "--out", "t"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn figures_are_byte_stable_and_refuse_csv() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["x", "y"] {
        let out = run(
            &["emit-figure", "--kind", "age-process", "--seed", "11", "--item", "1", "--out", sub],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0));
    }
    let a = std::fs::read(dir.path().join("x/age-process.svg")).unwrap();
    let b = std::fs::read(dir.path().join("y/age-process.svg")).unwrap();
    assert!(!a.is_empty() && a == b);

    let out = run(
        &["emit-figure", "--kind", "downcrossings", "--format", "csv", "--out", "z"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["emit-figure", "--kind", "no-such-figure"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
