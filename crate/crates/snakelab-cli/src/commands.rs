//! One runner per subcommand: resolve the configuration, run the library
//! experiments or samplers, write the report artifacts, and reduce to an
//! exit outcome.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use snakelab::cloud::{sample_cloud, AtomicMeasure, CloudParams};
use snakelab::erasure::{build_tree, extremum_gap, WalkBuilder};
use snakelab::excursion::{excursion_nodes, sample_excursion_conditioned};
use snakelab::experiments::{
    calibration_experiment, cloud_count_experiment, damped_experiment, forward_match_experiment,
    identity_experiment, local_time_experiment, mass_experiment, semigroup_experiment,
    spatial_experiment, tree_law_experiment, CalibrationConfig, CloudCountConfig, DampedConfig,
    DataRow, ForwardMatchConfig, IdentityConfig, LocalTimeConfig, MassConfig, SemigroupConfig,
    SpatialConfig, TreeLawConfig,
};
use snakelab::particles::forward_oobbm;
use snakelab::rng::{rng_for, tag};
use snakelab::{Counters, ExperimentReport};

use crate::config::{nonneg, positive, Cli, CliError, Command, CommonOpts, OutputFormat, Overlay};
use crate::figures;
use crate::report::{print_summary, write_csv, write_json, Outcome, RunReport};

pub const DEFAULT_TRUNCATION_BUDGET: f64 = 0.05;

pub fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::SampleExcursion(o) => with_pool(o, || sample_excursion_cmd(o)),
        Command::Erase(o) => with_pool(o, || erase_cmd(o)),
        Command::SimulateOobbm(o) => with_pool(o, || simulate_oobbm_cmd(o)),
        Command::SimulateForward(o) => with_pool(o, || simulate_forward_cmd(o)),
        Command::VerifyMass(o) => with_pool(o, || verify_mass_cmd(o)),
        Command::VerifyIdentity(o) => with_pool(o, || verify_identity_cmd(o)),
        Command::VerifyCoupling(o) => with_pool(o, || verify_coupling_cmd(o)),
        Command::VerifyTreeLaw(o) => with_pool(o, || verify_tree_law_cmd(o)),
        Command::CalibrateStats(o) => with_pool(o, || calibrate_stats_cmd(o)),
        Command::EmitFigure(f) => with_pool(&f.common, || figures::emit(f)),
    }
}

/// Replicate parallelism runs in a pool of the requested width. Replicates
/// are indexed and reduced in index order, so the width never shows in any
/// artifact.
fn with_pool<T>(
    o: &CommonOpts,
    run: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError>
where
    T: Send,
{
    match o.workers {
        None => run(),
        Some(0) => Err(CliError::Config("workers must be positive (got 0)".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?
            .install(run),
    }
}

pub fn out_dir(o: &CommonOpts) -> PathBuf {
    o.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn data_formats(req: &[OutputFormat]) -> Result<Vec<OutputFormat>, CliError> {
    if req.is_empty() {
        return Ok(vec![OutputFormat::Json, OutputFormat::Csv]);
    }
    let mut formats = Vec::new();
    for f in req {
        if *f == OutputFormat::Svg {
            return Err(CliError::Config("format svg is only produced by emit-figure".into()));
        }
        if !formats.contains(f) {
            formats.push(*f);
        }
    }
    Ok(formats)
}

fn alpha_of(ov: &Overlay, default: f64) -> Result<f64, CliError> {
    let a = ov.f64("alpha", None, default)?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(CliError::Config(format!("alpha must be inside (0, 1) (got {a})")))
    }
}

fn budget_of(ov: &Overlay) -> Result<f64, CliError> {
    let b = ov.f64("truncation_budget", None, DEFAULT_TRUNCATION_BUDGET)?;
    if (0.0..=1.0).contains(&b) {
        Ok(b)
    } else {
        Err(CliError::Config(format!("truncation_budget must be inside [0, 1] (got {b})")))
    }
}

fn at_least_one(name: &str, v: u64) -> Result<u64, CliError> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be at least 1 (got {v})")))
    }
}

fn finish(
    o: &CommonOpts,
    command: &str,
    seed: u64,
    config: serde_json::Value,
    experiments: Vec<ExperimentReport>,
    budget: f64,
) -> Result<Outcome, CliError> {
    let report = RunReport::new(command, seed, config, experiments, budget);
    let formats = data_formats(&o.format)?;
    print_summary(&report);
    let dir = out_dir(o);
    for f in &formats {
        let p = match f {
            OutputFormat::Json => write_json(&report, &dir)?,
            OutputFormat::Csv => write_csv(&report, &dir)?,
            OutputFormat::Svg => unreachable!("rejected by data_formats"),
        };
        println!("wrote {}", p.display());
    }
    Ok(report.outcome())
}

const VERIFY_TREE_LAW_KEYS: &[&str] = &[
    "seed",
    "clouds",
    "eps",
    "h",
    "gamma",
    "dormant_mass",
    "active_mass",
    "alpha",
    "reps",
    "dt",
    "max_points",
    "truncation_budget",
];

fn verify_tree_law_cmd(o: &CommonOpts) -> Result<Outcome, CliError> {
    let ov = Overlay::load("verify-tree-law", VERIFY_TREE_LAW_KEYS, o.config.as_deref())?;
    let seed = ov.seed(o.seed)?;
    let dc = CloudCountConfig::default();
    let dl = TreeLawConfig::default();
    let eps = ov.resolve_eps(o, dc.eps)?;
    let cloud = CloudCountConfig {
        seed,
        clouds: at_least_one("clouds", ov.u64("clouds", o.reps, dc.clouds)?)?,
        eps,
        dormant_mass: nonneg("dormant_mass", ov.f64("dormant_mass", o.md, dc.dormant_mass)?)?,
        active_mass: nonneg("active_mass", ov.f64("active_mass", o.ma, dc.active_mass)?)?,
        alpha: alpha_of(&ov, dc.alpha)?,
    };
    if cloud.dormant_mass + cloud.active_mass <= 0.0 {
        return Err(CliError::Config("dormant_mass + active_mass must be positive".into()));
    }
    let law = TreeLawConfig {
        seed,
        reps: at_least_one("reps", ov.u64("reps", o.reps, dl.reps)?)?,
        h: eps / 2.0,
        dt: positive("dt", ov.f64("dt", o.dt, dl.dt)?)?,
        max_points: ov.usize("max_points", None, dl.max_points)?,
        alpha: alpha_of(&ov, dl.alpha)?,
    };
    let budget = budget_of(&ov)?;
    let r1 = cloud_count_experiment(&cloud)?;
    let r2 = tree_law_experiment(&law)?;
    let echo = json!({
        "cloud_count": cloud,
        "tree_law": law,
        "truncation_budget": budget,
    });
    finish(o, "verify-tree-law", seed, echo, vec![r1, r2], budget)
}

const VERIFY_IDENTITY_KEYS: &[&str] = &[
    "seed",
    "items",
    "eps",
    "h",
    "gamma",
    "dt",
    "max_points",
    "c",
    "ctilde",
    "s",
    "max_events",
    "alpha",
    "reps",
    "truncation_budget",
];

fn verify_identity_cmd(o: &CommonOpts) -> Result<Outcome, CliError> {
    let ov = Overlay::load("verify-identity", VERIFY_IDENTITY_KEYS, o.config.as_deref())?;
    let seed = ov.seed(o.seed)?;
    let di = IdentityConfig::default();
    let df = ForwardMatchConfig::default();
    let eps = ov.resolve_eps(o, di.eps)?;
    let c = nonneg("c", ov.f64("c", o.c, di.c)?)?;
    let ctilde = positive("ctilde", ov.f64("ctilde", o.ctilde, di.ctilde)?)?;
    let dt = positive("dt", ov.f64("dt", o.dt, di.dt)?)?;
    let identity = IdentityConfig {
        seed,
        items: at_least_one("items", ov.u64("items", o.reps, di.items)?)?,
        eps,
        dt,
        max_points: ov.usize("max_points", None, di.max_points)?,
        c,
        ctilde,
    };
    let forward = ForwardMatchConfig {
        seed,
        reps: at_least_one("reps", ov.u64("reps", o.reps, df.reps)?)?,
        eps,
        dt,
        max_points: ov.usize("max_points", None, df.max_points)?,
        c,
        ctilde,
        s: nonneg("s", ov.f64("s", o.s, df.s)?)?,
        max_events: ov.u64("max_events", None, df.max_events)?,
        alpha: alpha_of(&ov, df.alpha)?,
    };
    let budget = budget_of(&ov)?;
    let r1 = identity_experiment(&identity)?;
    let r2 = forward_match_experiment(&forward)?;
    let echo = json!({
        "identity": identity,
        "forward_match": forward,
        "truncation_budget": budget,
    });
    finish(o, "verify-identity", seed, echo, vec![r1, r2], budget)
}

const VERIFY_MASS_KEYS: &[&str] = &[
    "seed",
    "clouds",
    "eps",
    "h",
    "gamma",
    "dt",
    "max_points",
    "c",
    "ctilde",
    "dormant_mass",
    "active_mass",
    "ages",
    "s",
    "ck_tol",
    "row_tol",
    "stationary_tol",
    "reps",
    "truncation_budget",
];

fn verify_mass_cmd(o: &CommonOpts) -> Result<Outcome, CliError> {
    let ov = Overlay::load("verify-mass", VERIFY_MASS_KEYS, o.config.as_deref())?;
    let seed = ov.seed(o.seed)?;
    let dm = MassConfig::default();
    let ds = SemigroupConfig::default();
    let ages = ov.f64_list("ages", o.s, dm.ages.clone())?;
    for &a in &ages {
        nonneg("ages", a)?;
    }
    let mass = MassConfig {
        seed,
        clouds: at_least_one("clouds", ov.u64("clouds", o.reps, dm.clouds)?)?,
        eps: ov.resolve_eps(o, dm.eps)?,
        dt: positive("dt", ov.f64("dt", o.dt, dm.dt)?)?,
        max_points: ov.usize("max_points", None, dm.max_points)?,
        c: nonneg("c", ov.f64("c", o.c, dm.c)?)?,
        ctilde: positive("ctilde", ov.f64("ctilde", o.ctilde, dm.ctilde)?)?,
        dormant_mass: nonneg("dormant_mass", ov.f64("dormant_mass", o.md, dm.dormant_mass)?)?,
        active_mass: nonneg("active_mass", ov.f64("active_mass", o.ma, dm.active_mass)?)?,
        ages,
    };
    if mass.dormant_mass + mass.active_mass <= 0.0 {
        return Err(CliError::Config("dormant_mass + active_mass must be positive".into()));
    }
    let semigroup = SemigroupConfig {
        seed,
        ck_tol: positive("ck_tol", ov.f64("ck_tol", None, ds.ck_tol)?)?,
        row_tol: positive("row_tol", ov.f64("row_tol", None, ds.row_tol)?)?,
        stationary_tol: positive("stationary_tol", ov.f64("stationary_tol", None, ds.stationary_tol)?)?,
    };
    let budget = budget_of(&ov)?;
    let r1 = mass_experiment(&mass)?;
    let r2 = semigroup_experiment(&semigroup)?;
    let echo = json!({
        "mass": mass,
        "semigroup": semigroup,
        "truncation_budget": budget,
    });
    finish(o, "verify-mass", seed, echo, vec![r1, r2], budget)
}

const VERIFY_COUPLING_KEYS: &[&str] = &[
    "seed",
    "clouds",
    "items",
    "eps",
    "h",
    "gamma",
    "dt",
    "max_points",
    "c",
    "ctilde",
    "active_mass",
    "y",
    "dim",
    "reps",
    "truncation_budget",
];

fn verify_coupling_cmd(o: &CommonOpts) -> Result<Outcome, CliError> {
    let ov = Overlay::load("verify-coupling", VERIFY_COUPLING_KEYS, o.config.as_deref())?;
    let seed = ov.seed(o.seed)?;
    let dd = DampedConfig::default();
    let dsp = SpatialConfig::default();
    let c = nonneg("c", ov.f64("c", o.c, dd.c)?)?;
    let ctilde = positive("ctilde", ov.f64("ctilde", o.ctilde, dd.ctilde)?)?;
    let damped = DampedConfig {
        seed,
        clouds: at_least_one("clouds", ov.u64("clouds", o.reps, dd.clouds)?)?,
        eps: ov.resolve_eps(o, dd.eps)?,
        dt: positive("dt", ov.f64("dt", o.dt, dd.dt)?)?,
        max_points: ov.usize("max_points", None, dd.max_points)?,
        c,
        ctilde,
        active_mass: positive("active_mass", ov.f64("active_mass", o.ma, dd.active_mass)?)?,
        y: nonneg("y", ov.f64("y", None, dd.y)?)?,
    };
    let spatial = SpatialConfig {
        seed,
        items: at_least_one("items", ov.u64("items", o.reps, dsp.items)?)?,
        eps: ov.resolve_eps(o, dsp.eps)?,
        dt: positive("dt", ov.f64("dt", o.dt, dsp.dt)?)?,
        max_points: ov.usize("max_points", None, dsp.max_points)?,
        c,
        ctilde,
        dim: ov.usize("dim", None, dsp.dim)?.max(1),
    };
    let budget = budget_of(&ov)?;
    let r1 = damped_experiment(&damped)?;
    let r2 = spatial_experiment(&spatial)?;
    let echo = json!({
        "damped": damped,
        "spatial": spatial,
        "truncation_budget": budget,
    });
    finish(o, "verify-coupling", seed, echo, vec![r1, r2], budget)
}

const CALIBRATE_STATS_KEYS: &[&str] = &[
    "seed",
    "trials",
    "alpha",
    "paths",
    "dt",
    "steps",
    "level",
    "widths",
    "band",
    "rel_tol",
    "reps",
    "truncation_budget",
];

fn calibrate_stats_cmd(o: &CommonOpts) -> Result<Outcome, CliError> {
    let ov = Overlay::load("calibrate-stats", CALIBRATE_STATS_KEYS, o.config.as_deref())?;
    let seed = ov.seed(o.seed)?;
    let dc = CalibrationConfig::default();
    let dl = LocalTimeConfig::default();
    let calibration = CalibrationConfig {
        seed,
        trials: at_least_one("trials", ov.u64("trials", o.reps, dc.trials)?)?,
        alpha: alpha_of(&ov, dc.alpha)?,
    };
    let widths = ov.f64_list("widths", o.h, dl.widths.clone())?;
    for &w in &widths {
        positive("widths", w)?;
    }
    let local_time = LocalTimeConfig {
        seed,
        paths: at_least_one("paths", ov.u64("paths", o.reps, dl.paths)?)?,
        dt: positive("dt", ov.f64("dt", o.dt, dl.dt)?)?,
        steps: ov.usize("steps", None, dl.steps)?,
        level: positive("level", ov.f64("level", None, dl.level)?)?,
        widths,
        band: positive("band", ov.f64("band", None, dl.band)?)?,
        rel_tol: positive("rel_tol", ov.f64("rel_tol", None, dl.rel_tol)?)?,
    };
    let budget = budget_of(&ov)?;
    let r1 = calibration_experiment(&calibration)?;
    let r2 = local_time_experiment(&local_time)?;
    let echo = json!({
        "calibration": calibration,
        "local_time": local_time,
        "truncation_budget": budget,
    });
    finish(o, "calibrate-stats", seed, echo, vec![r1, r2], budget)
}

const SAMPLE_EXCURSION_KEYS: &[&str] =
    &["seed", "reps", "eps", "h", "gamma", "dt", "max_points", "truncation_budget"];

#[derive(Serialize)]
struct SampleExcursionConfig {
    seed: u64,
    reps: u64,
    h: f64,
    dt: f64,
    max_points: usize,
}

fn sample_excursion_cmd(o: &CommonOpts) -> Result<Outcome, CliError> {
    let ov = Overlay::load("sample-excursion", SAMPLE_EXCURSION_KEYS, o.config.as_deref())?;
    let seed = ov.seed(o.seed)?;
    let eps = ov.resolve_eps(o, 1.0)?;
    let cfg = SampleExcursionConfig {
        seed,
        reps: at_least_one("reps", ov.u64("reps", o.reps, 1)?)?,
        h: eps / 2.0,
        dt: positive("dt", ov.f64("dt", o.dt, 1e-4)?)?,
        max_points: ov.usize("max_points", None, 10_000_000)?,
    };
    let budget = budget_of(&ov)?;

    struct Rep {
        sigma: f64,
        max: f64,
        points: usize,
        truncated: bool,
        path: Option<Vec<(f64, f64)>>,
    }
    let reps: Vec<Rep> = (0..cfg.reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, tag::EXCURSION, i);
            let e = sample_excursion_conditioned(cfg.h, cfg.dt, cfg.max_points, &mut rng);
            // Only the first path is exported; the rest contribute summaries.
            let path = (i == 0).then(|| figures::decimate_path(&e.path, 2048));
            Rep { sigma: e.sigma, max: e.grid_max(), points: e.path.len(), truncated: e.truncated, path }
        })
        .collect();

    let mut rows = Vec::new();
    for (i, r) in reps.iter().enumerate() {
        if let Some(path) = &r.path {
            for &(t, v) in path {
                rows.push(DataRow {
                    replicate: i as u64,
                    time: t,
                    component: "path",
                    count: 0,
                    scaled_mass: v,
                });
            }
        }
        rows.push(DataRow {
            replicate: i as u64,
            time: 0.0,
            component: "lifetime",
            count: r.points as u64,
            scaled_mass: r.sigma,
        });
        rows.push(DataRow {
            replicate: i as u64,
            time: 0.0,
            component: "maximum",
            count: 0,
            scaled_mass: r.max,
        });
    }
    let counters = Counters {
        replicates: cfg.reps,
        paths: cfg.reps,
        truncated: reps.iter().filter(|r| r.truncated).count() as u64,
        grid_points: reps.iter().map(|r| r.points as u64).sum(),
        ..Default::default()
    };
    let report = ExperimentReport::new("conditioned excursion sample", seed, Vec::new(), counters)
        .with_rows(rows);
    let echo = json!({ "sample_excursion": cfg, "truncation_budget": budget });
    finish(o, "sample-excursion", seed, echo, vec![report], budget)
}

const ERASE_KEYS: &[&str] =
    &["seed", "reps", "eps", "h", "gamma", "dt", "max_points", "truncation_budget"];

#[derive(Serialize)]
struct EraseConfig {
    seed: u64,
    reps: u64,
    h: f64,
    dt: f64,
    max_points: usize,
}

fn erase_cmd(o: &CommonOpts) -> Result<Outcome, CliError> {
    let ov = Overlay::load("erase", ERASE_KEYS, o.config.as_deref())?;
    let seed = ov.seed(o.seed)?;
    let eps = ov.resolve_eps(o, 1.0)?;
    let cfg = EraseConfig {
        seed,
        reps: at_least_one("reps", ov.u64("reps", o.reps, 100)?)?,
        h: eps / 2.0,
        dt: positive("dt", ov.f64("dt", o.dt, 1e-4)?)?,
        max_points: ov.usize("max_points", None, 2_000_000)?,
    };
    let budget = budget_of(&ov)?;

    struct Rep {
        edges: u64,
        total_len: f64,
        root_id: u64,
        root_len: f64,
        has_tree: bool,
        truncated: bool,
        points: usize,
        profile: Option<Vec<(f64, f64)>>,
    }
    let reps: Vec<Rep> = (0..cfg.reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, tag::EXCURSION, i);
            let mut it = excursion_nodes(cfg.h, cfg.dt, cfg.max_points, &mut rng);
            let mut b = WalkBuilder::new(cfg.h, extremum_gap(cfg.dt));
            for (t, v) in it.by_ref() {
                b.push(t, v);
            }
            let walk = b.finish();
            let (truncated, points) = (it.truncated(), it.emitted());
            let profile = (i == 0).then(|| walk.erased_profile());
            match build_tree(&walk) {
                Ok(tree) => {
                    let root = tree.edge(tree.root);
                    Rep {
                        edges: tree.len() as u64,
                        total_len: tree.edges.iter().map(|e| e.len()).sum(),
                        root_id: tree.root as u64,
                        root_len: root.len(),
                        has_tree: true,
                        truncated,
                        points,
                        profile,
                    }
                }
                Err(_) => Rep {
                    edges: 0,
                    total_len: 0.0,
                    root_id: 0,
                    root_len: 0.0,
                    has_tree: false,
                    truncated,
                    points,
                    profile,
                },
            }
        })
        .collect();

    let mut rows = Vec::new();
    for (i, r) in reps.iter().enumerate() {
        if let Some(profile) = &r.profile {
            for (k, &(t, z)) in profile.iter().enumerate() {
                rows.push(DataRow {
                    replicate: i as u64,
                    time: t,
                    component: "walk",
                    count: k as u64,
                    scaled_mass: z,
                });
            }
        }
        if r.has_tree {
            rows.push(DataRow {
                replicate: i as u64,
                time: 0.0,
                component: "edges",
                count: r.edges,
                scaled_mass: r.total_len,
            });
            rows.push(DataRow {
                replicate: i as u64,
                time: 0.0,
                component: "root_edge",
                count: r.root_id,
                scaled_mass: r.root_len,
            });
        }
    }
    let counters = Counters {
        replicates: cfg.reps,
        paths: cfg.reps,
        truncated: reps.iter().filter(|r| r.truncated).count() as u64,
        grid_points: reps.iter().map(|r| r.points as u64).sum(),
        ..Default::default()
    };
    let report = ExperimentReport::new("alternating walk and erased tree sample", seed, Vec::new(), counters)
        .with_rows(rows);
    let echo = json!({ "erase": cfg, "truncation_budget": budget });
    finish(o, "erase", seed, echo, vec![report], budget)
}

const SIMULATE_OOBBM_KEYS: &[&str] = &[
    "seed",
    "reps",
    "clouds",
    "eps",
    "h",
    "gamma",
    "dt",
    "max_points",
    "c",
    "ctilde",
    "dormant_mass",
    "active_mass",
    "ages",
    "s",
    "dim",
    "truncation_budget",
];

#[derive(Serialize)]
struct SimulateOobbmConfig {
    seed: u64,
    clouds: u64,
    eps: f64,
    dt: f64,
    max_points: usize,
    c: f64,
    ctilde: f64,
    dormant_mass: f64,
    active_mass: f64,
    ages: Vec<f64>,
    dim: usize,
}

fn simulate_oobbm_cmd(o: &CommonOpts) -> Result<Outcome, CliError> {
    let ov = Overlay::load("simulate-oobbm", SIMULATE_OOBBM_KEYS, o.config.as_deref())?;
    let seed = ov.seed(o.seed)?;
    let ages = ov.f64_list("ages", o.s, vec![0.5])?;
    for &a in &ages {
        nonneg("ages", a)?;
    }
    let cfg = SimulateOobbmConfig {
        seed,
        clouds: at_least_one("clouds", ov.u64("clouds", o.reps, 100)?)?,
        eps: ov.resolve_eps(o, 0.5)?,
        dt: positive("dt", ov.f64("dt", o.dt, 1e-4)?)?,
        max_points: ov.usize("max_points", None, 1_000_000)?,
        c: nonneg("c", ov.f64("c", o.c, 1.0)?)?,
        ctilde: positive("ctilde", ov.f64("ctilde", o.ctilde, 2.0)?)?,
        dormant_mass: nonneg("dormant_mass", ov.f64("dormant_mass", o.md, 0.0)?)?,
        active_mass: nonneg("active_mass", ov.f64("active_mass", o.ma, 1.0)?)?,
        ages,
        dim: ov.usize("dim", None, 2)?.max(1),
    };
    if cfg.dormant_mass + cfg.active_mass <= 0.0 {
        return Err(CliError::Config("dormant_mass + active_mass must be positive".into()));
    }
    let budget = budget_of(&ov)?;

    let params = CloudParams {
        eps: cfg.eps,
        c: cfg.c,
        ctilde: cfg.ctilde,
        dim: cfg.dim,
        dt: cfg.dt,
        max_points: cfg.max_points,
        keep_path: false,
    };
    let origin = vec![0.0; cfg.dim];
    let dormant = AtomicMeasure::point(origin.clone(), cfg.dormant_mass);
    let active = AtomicMeasure::point(origin, cfg.active_mass);

    struct Rep {
        counts: Vec<(u64, u64)>,
        items: u64,
        truncated: u64,
        points: u64,
    }
    let reps: Result<Vec<Rep>, snakelab::Error> = (0..cfg.clouds)
        .into_par_iter()
        .map(|i| {
            let cloud = sample_cloud(&params, &dormant, &active, seed, i)?;
            let counts = cfg
                .ages
                .iter()
                .map(|&s| snakelab::cloud::cloud_counts(&cloud, s))
                .collect();
            Ok(Rep {
                counts,
                items: cloud.items.len() as u64,
                truncated: cloud.truncated_items as u64,
                points: cloud.items.iter().map(|it| it.points as u64).sum(),
            })
        })
        .collect();
    let reps = reps?;

    let mut rows = Vec::new();
    for (i, r) in reps.iter().enumerate() {
        for (j, &s) in cfg.ages.iter().enumerate() {
            let (a, d) = r.counts[j];
            rows.push(DataRow {
                replicate: i as u64,
                time: s,
                component: "active",
                count: a,
                scaled_mass: cfg.eps * a as f64,
            });
            rows.push(DataRow {
                replicate: i as u64,
                time: s,
                component: "dormant",
                count: d,
                scaled_mass: cfg.eps * d as f64,
            });
        }
    }
    let counters = Counters {
        replicates: cfg.clouds,
        paths: reps.iter().map(|r| r.items).sum(),
        truncated: reps.iter().map(|r| r.truncated).sum(),
        grid_points: reps.iter().map(|r| r.points).sum(),
        ..Default::default()
    };
    let report = ExperimentReport::new("snake cloud particle counts", seed, Vec::new(), counters)
        .with_rows(rows);
    let echo = json!({ "simulate_oobbm": cfg, "truncation_budget": budget });
    finish(o, "simulate-oobbm", seed, echo, vec![report], budget)
}

const SIMULATE_FORWARD_KEYS: &[&str] = &[
    "seed",
    "reps",
    "eps",
    "h",
    "gamma",
    "c",
    "ctilde",
    "init_active",
    "init_dormant",
    "s",
    "max_events",
    "truncation_budget",
];

#[derive(Serialize)]
struct SimulateForwardConfig {
    seed: u64,
    reps: u64,
    eps: f64,
    gamma: f64,
    c: f64,
    ctilde: f64,
    init_active: u64,
    init_dormant: u64,
    s: f64,
    max_events: u64,
}

fn count_from_mass(name: &str, m: Option<f64>) -> Result<Option<u64>, CliError> {
    match m {
        None => Ok(None),
        Some(v) if v >= 0.0 && v.fract() == 0.0 && v <= 1e9 => Ok(Some(v as u64)),
        Some(v) => Err(CliError::Config(format!(
            "{name} must be a whole particle count for simulate-forward (got {v})"
        ))),
    }
}

fn simulate_forward_cmd(o: &CommonOpts) -> Result<Outcome, CliError> {
    let ov = Overlay::load("simulate-forward", SIMULATE_FORWARD_KEYS, o.config.as_deref())?;
    let seed = ov.seed(o.seed)?;
    let eps = ov.resolve_eps(o, 0.5)?;
    let cfg = SimulateForwardConfig {
        seed,
        reps: at_least_one("reps", ov.u64("reps", o.reps, 1000)?)?,
        eps,
        gamma: 4.0 / eps,
        c: nonneg("c", ov.f64("c", o.c, 1.0)?)?,
        ctilde: positive("ctilde", ov.f64("ctilde", o.ctilde, 2.0)?)?,
        init_active: ov.u64("init_active", count_from_mass("ma", o.ma)?, 1)?,
        init_dormant: ov.u64("init_dormant", count_from_mass("md", o.md)?, 0)?,
        s: nonneg("s", ov.f64("s", o.s, 0.5)?)?,
        max_events: ov.u64("max_events", None, 200_000)?,
    };
    if cfg.init_active + cfg.init_dormant == 0 {
        return Err(CliError::Config("init_active + init_dormant must be at least 1".into()));
    }
    let budget = budget_of(&ov)?;

    let counts: Vec<snakelab::ForwardCounts> = (0..cfg.reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, tag::FORWARD, i);
            forward_oobbm(
                cfg.gamma,
                cfg.c,
                cfg.ctilde,
                cfg.init_active,
                cfg.init_dormant,
                cfg.s,
                cfg.max_events,
                &mut rng,
            )
        })
        .collect();

    let mut rows = Vec::new();
    for (i, fc) in counts.iter().enumerate() {
        rows.push(DataRow {
            replicate: i as u64,
            time: cfg.s,
            component: "forward_active",
            count: fc.active,
            scaled_mass: cfg.eps * fc.active as f64,
        });
        rows.push(DataRow {
            replicate: i as u64,
            time: cfg.s,
            component: "forward_dormant",
            count: fc.dormant,
            scaled_mass: cfg.eps * fc.dormant as f64,
        });
    }
    let counters = Counters {
        replicates: cfg.reps,
        truncated: counts.iter().filter(|fc| fc.truncated).count() as u64,
        events: counts.iter().map(|fc| fc.events).sum(),
        ..Default::default()
    };
    let report = ExperimentReport::new("forward on/off population", seed, Vec::new(), counters)
        .with_rows(rows);
    let echo = json!({ "simulate_forward": cfg, "truncation_budget": budget });
    finish(o, "simulate-forward", seed, echo, vec![report], budget)
}
