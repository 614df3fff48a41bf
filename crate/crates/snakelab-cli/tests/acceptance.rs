//! Acceptance battery at the pinned desk scale. Each test covers one
//! criterion, prints a single pass/fail line, and fails loudly with the
//! offending gates when a criterion does not hold.

use std::path::Path;
use std::process::Command;

use snakelab::experiments::{
    calibration_experiment, cloud_count_experiment, damped_experiment, forward_match_experiment,
    identity_experiment, local_time_experiment, mass_experiment, semigroup_experiment,
    spatial_experiment, tree_law_experiment, CalibrationConfig, CloudCountConfig, DampedConfig,
    ForwardMatchConfig, IdentityConfig, LocalTimeConfig, MassConfig, SemigroupConfig,
    SpatialConfig, TreeLawConfig,
};
use snakelab::ExperimentReport;

fn assert_criterion(n: usize, label: &str, reports: &[ExperimentReport]) {
    let pass = reports.iter().all(|r| r.pass);
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n} {verdict} {label}");
    if !pass {
        for r in reports {
            for c in r.checks.iter().filter(|c| !c.pass) {
                println!("  failed gate [{}] {} :: {}", r.name, c.name, c.detail);
            }
        }
        panic!("criterion {n} FAIL {label}");
    }
}

#[test]
fn excursion_cloud_count_is_poisson() {
    let report = cloud_count_experiment(&CloudCountConfig::default()).unwrap();
    assert_criterion(1, "excursion count law", &[report]);
}

#[test]
fn erased_tree_edge_law_and_root_split() {
    let report = tree_law_experiment(&TreeLawConfig::default()).unwrap();
    assert_criterion(2, "h-erased tree law", &[report]);
}

#[test]
fn tree_and_downcrossing_constructions_agree() {
    let report = identity_experiment(&IdentityConfig::default()).unwrap();
    assert_criterion(3, "representation identity", &[report]);
}

#[test]
fn snake_counts_match_forward_simulation() {
    let report = forward_match_experiment(&ForwardMatchConfig::default()).unwrap();
    assert_criterion(4, "dynamics oracle", &[report]);
}

#[test]
fn scaled_masses_match_closed_form() {
    let report = mass_experiment(&MassConfig::default()).unwrap();
    assert_criterion(5, "expected total masses", &[report]);
}

#[test]
fn damped_mass_decays_exponentially() {
    let report = damped_experiment(&DampedConfig::default()).unwrap();
    assert_criterion(6, "damped mass decay", &[report]);
}

#[test]
fn downcrossing_counts_estimate_local_time() {
    let report = local_time_experiment(&LocalTimeConfig::default()).unwrap();
    // The gates themselves must stay honest: a battery whose tests never
    // reject would green-light anything.
    let cal = calibration_experiment(&CalibrationConfig::default()).unwrap();
    assert_criterion(7, "downcrossing local time scaling", &[report, cal]);
}

#[test]
fn atoms_ride_spatial_paths_and_dormant_mass_accretes() {
    let report = spatial_experiment(&SpatialConfig::default()).unwrap();
    assert_criterion(8, "coupling and accretion", &[report]);
}

#[test]
fn two_state_semigroup_algebra() {
    let report = semigroup_experiment(&SemigroupConfig::default()).unwrap();
    assert_criterion(9, "semigroup algebra", &[report]);
}

const SMALL_CONFIG: &str = "\
[verify-tree-law]
clouds = 300
reps = 300
dt = 1e-3

[verify-identity]
items = 300
reps = 300
dt = 1e-3

[verify-mass]
clouds = 30
eps = 0.3
dt = 2e-4
max_points = 400000
ages = [0.3]

[verify-coupling]
clouds = 100
items = 100
eps = 0.2
dt = 1e-3
max_points = 200000
";

fn run_verify(command: &str, config: &Path, out: &Path, workers: &str) -> (i32, Vec<u8>, Vec<u8>) {
    let status = Command::new(env!("CARGO_BIN_EXE_snakelab"))
        .args([
            command,
            "--seed",
            "0",
            "--config",
            config.to_str().unwrap(),
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ])
        .env_remove("SNAKELAB_SEED")
        .output()
        .expect("binary runs");
    let json = std::fs::read(out.join(format!("{command}.json"))).expect("json artifact");
    let csv = std::fs::read(out.join(format!("{command}.csv"))).expect("csv artifact");
    (status.status.code().unwrap_or(-1), json, csv)
}

#[test]
fn verify_commands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, SMALL_CONFIG).unwrap();

    let mut all_equal = true;
    for command in ["verify-tree-law", "verify-identity", "verify-mass", "verify-coupling"] {
        let runs: Vec<_> = [("a", "1"), ("b", "1"), ("c", "3")]
            .iter()
            .map(|(tag, workers)| {
                let out = dir.path().join(format!("{command}-{tag}"));
                run_verify(command, &config, &out, workers)
            })
            .collect();
        for r in &runs[1..] {
            if r.0 != runs[0].0 || r.1 != runs[0].1 || r.2 != runs[0].2 {
                all_equal = false;
                println!(
                    "  {command}: exit {} vs {}, json equal {}, csv equal {}",
                    runs[0].0,
                    r.0,
                    r.1 == runs[0].1,
                    r.2 == runs[0].2
                );
            }
        }
        if runs[0].0 != 0 {
            all_equal = false;
            println!("  {command}: exit code {}", runs[0].0);
        }
    }
    let verdict = if all_equal { "PASS" } else { "FAIL" };
    println!("criterion 10 {verdict} determinism");
    assert!(all_equal, "criterion 10 FAIL determinism");
}
