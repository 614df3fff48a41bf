//! Run reports and artifact writers. A report is a pure function of
//! (command, config, seed), so the JSON and CSV bytes are identical across
//! reruns and worker counts; nothing execution-dependent goes in.

use std::path::{Path, PathBuf};

use serde::Serialize;
use snakelab::ExperimentReport;

use crate::config::CliError;

pub struct Outcome {
    pub pass: bool,
    pub truncation_over: bool,
}

#[derive(Serialize)]
pub struct TruncationSummary {
    pub budget: f64,
    /// Worst per-experiment truncated fraction (paths when counted,
    /// replicates otherwise).
    pub fraction: f64,
    pub over: bool,
}

#[derive(Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub experiments: Vec<ExperimentReport>,
    pub truncation: TruncationSummary,
    pub pass: bool,
}

impl RunReport {
    pub fn new(
        command: &str,
        seed: u64,
        config: serde_json::Value,
        experiments: Vec<ExperimentReport>,
        budget: f64,
    ) -> RunReport {
        let mut fraction: f64 = 0.0;
        for e in &experiments {
            let denom = if e.counters.paths > 0 { e.counters.paths } else { e.counters.replicates };
            if denom > 0 {
                fraction = fraction.max(e.counters.truncated as f64 / denom as f64);
            }
        }
        let pass = experiments.iter().all(|e| e.pass);
        RunReport {
            schema_version: 1,
            command: command.into(),
            seed,
            config,
            experiments,
            truncation: TruncationSummary { budget, fraction, over: fraction > budget },
            pass,
        }
    }

    pub fn outcome(&self) -> Outcome {
        Outcome { pass: self.pass, truncation_over: self.truncation.over }
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_json(report: &RunReport, dir: &Path) -> Result<PathBuf, CliError> {
    ensure_dir(dir)?;
    let path = dir.join(format!("{}.json", report.command));
    let mut buf = serde_json::to_vec_pretty(report)
        .map_err(|e| CliError::Io(format!("cannot encode report: {e}")))?;
    buf.push(b'\n');
    std::fs::write(&path, buf)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

pub fn write_csv(report: &RunReport, dir: &Path) -> Result<PathBuf, CliError> {
    ensure_dir(dir)?;
    let path = dir.join(format!("{}.csv", report.command));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "replicate", "time", "component", "count", "scaled_mass"])
        .map_err(|e| CliError::Io(format!("cannot encode csv: {e}")))?;
    for e in &report.experiments {
        for r in &e.rows {
            w.serialize((e.seed, r.replicate, r.time, r.component, r.count, r.scaled_mass))
                .map_err(|e| CliError::Io(format!("cannot encode csv: {e}")))?;
        }
    }
    let buf = w
        .into_inner()
        .map_err(|e| CliError::Io(format!("cannot encode csv: {e}")))?;
    std::fs::write(&path, buf)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

pub fn print_summary(report: &RunReport) {
    for e in &report.experiments {
        println!("{} (seed {})", e.name, e.seed);
        for c in &e.checks {
            println!("  [{}] {} :: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        let k = &e.counters;
        println!(
            "  replicates {} paths {} truncated {} grid points {} events {}",
            k.replicates, k.paths, k.truncated, k.grid_points, k.events
        );
    }
    if report.truncation.over {
        println!(
            "{}: truncated fraction {:.4} over budget {:.4}",
            report.command, report.truncation.fraction, report.truncation.budget
        );
    } else {
        println!("{}: {}", report.command, if report.pass { "pass" } else { "FAIL" });
    }
}
