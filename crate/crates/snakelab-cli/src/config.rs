//! Flags, config file, and the merge between them. Every parameter resolves
//! with precedence CLI > config file > SNAKELAB_SEED (seed only) > built-in
//! defaults; the file is flat key = value TOML with one optional section per
//! command overriding the top level.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// Exit 1: the invocation or environment is wrong.
    Config(String),
    /// Exit 1: an artifact could not be written.
    Io(String),
    /// Exit 3: sampling budgets voided the statistics.
    Truncation(String),
}

impl From<snakelab::Error> for CliError {
    fn from(e: snakelab::Error) -> Self {
        match e {
            snakelab::Error::ResourceLimit(m) => CliError::Truncation(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "snakelab",
    version,
    about = "Marked Brownian excursions, erased genealogies, and the on/off particle systems built from them"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Sample conditioned excursions; writes the first path and per-replicate summaries.
    SampleExcursion(CommonOpts),
    /// Erase sampled excursions into alternating walks and genealogical trees.
    Erase(CommonOpts),
    /// Count on/off particles in snake-built clouds at the requested ages.
    SimulateOobbm(CommonOpts),
    /// Run the forward event-driven on/off population to age s.
    SimulateForward(CommonOpts),
    /// Check closed-form expected masses and the switching semigroup.
    VerifyMass(CommonOpts),
    /// Check tree-route vs sweep-route particle identity and forward dynamics agreement.
    VerifyIdentity(CommonOpts),
    /// Check damped-slice decay, spatial coupling, and dormant-mass accretion.
    VerifyCoupling(CommonOpts),
    /// Check cloud count laws and erased-tree edge laws.
    VerifyTreeLaw(CommonOpts),
    /// Calibrate statistical gates on null data and the downcrossing local-time estimator.
    CalibrateStats(CommonOpts),
    /// Draw one realization as a layered SVG figure.
    EmitFigure(FigureOpts),
}

#[derive(Args, Clone)]
pub struct CommonOpts {
    /// TOML config file; a [command] section overrides top-level keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (fallback: SNAKELAB_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mass per excursion item; the erasure threshold is eps/2.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Erasure threshold; same knob as eps = 2h.
    #[arg(long)]
    pub h: Option<f64>,
    /// Sleep rate along lifetimes.
    #[arg(long)]
    pub c: Option<f64>,
    /// Wake rate; also the dormant age-offset rate.
    #[arg(long)]
    pub ctilde: Option<f64>,
    /// Total branching event rate; same knob as eps = 4/gamma.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Grid step of the excursion sampler.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Initial dormant mass (particle count for simulate-forward).
    #[arg(long)]
    pub md: Option<f64>,
    /// Initial active mass (particle count for simulate-forward).
    #[arg(long)]
    pub ma: Option<f64>,
    /// Age to evaluate at; replaces the command's age list.
    #[arg(long)]
    pub s: Option<f64>,
    /// Replicate count; applies to every replicate-count knob of the command.
    #[arg(long)]
    pub reps: Option<u64>,
    /// Worker threads for replicate-parallel sections (flag only; results
    /// are independent of the value).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory for reports and data files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Artifact formats to write (default: json,csv; emit-figure: svg).
    #[arg(long, value_delimiter = ',')]
    pub format: Vec<OutputFormat>,
}

#[derive(Args, Clone)]
pub struct FigureOpts {
    #[command(flatten)]
    pub common: CommonOpts,
    /// Which figure to draw.
    #[arg(long, value_enum)]
    pub kind: Option<FigureKind>,
    /// Realization index within the seed's item stream.
    #[arg(long)]
    pub item: Option<u64>,
    /// Base level for the downcrossings figure.
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq, Debug)]
pub enum OutputFormat {
    Json,
    Csv,
    Svg,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq, Debug)]
pub enum FigureKind {
    ContourTree,
    AgeProcess,
    Downcrossings,
}

impl FigureKind {
    pub fn slug(self) -> &'static str {
        match self {
            FigureKind::ContourTree => "contour-tree",
            FigureKind::AgeProcess => "age-process",
            FigureKind::Downcrossings => "downcrossings",
        }
    }

    fn parse(s: &str) -> Option<FigureKind> {
        match s {
            "contour-tree" => Some(FigureKind::ContourTree),
            "age-process" => Some(FigureKind::AgeProcess),
            "downcrossings" => Some(FigureKind::Downcrossings),
            _ => None,
        }
    }
}

pub const COMMANDS: &[&str] = &[
    "sample-excursion",
    "erase",
    "simulate-oobbm",
    "simulate-forward",
    "verify-mass",
    "verify-identity",
    "verify-coupling",
    "verify-tree-law",
    "calibrate-stats",
    "emit-figure",
];

/// Union of every key any command understands; top-level file keys must come
/// from here so shared files stay typo-safe across commands.
pub const ALL_KEYS: &[&str] = &[
    "seed",
    "eps",
    "h",
    "gamma",
    "dt",
    "max_points",
    "c",
    "ctilde",
    "s",
    "ages",
    "reps",
    "clouds",
    "items",
    "paths",
    "trials",
    "steps",
    "dormant_mass",
    "active_mass",
    "init_active",
    "init_dormant",
    "y",
    "level",
    "widths",
    "band",
    "rel_tol",
    "alpha",
    "max_events",
    "dim",
    "ck_tol",
    "row_tol",
    "stationary_tol",
    "truncation_budget",
    "kind",
    "item",
];

/// The merged file view for one command: section keys layered over the
/// top-level scalars, plus the environment seed.
pub struct Overlay {
    table: toml::Table,
    env_seed: Option<u64>,
}

fn bad_type(key: &str, want: &str, got: &toml::Value) -> CliError {
    CliError::Config(format!("key `{key}` must be {want} (got {got})"))
}

fn coerce_f64(key: &str, v: &toml::Value) -> Result<f64, CliError> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(n) => Ok(*n as f64),
        other => Err(bad_type(key, "a number", other)),
    }
}

fn coerce_u64(key: &str, v: &toml::Value) -> Result<u64, CliError> {
    match v {
        toml::Value::Integer(n) if *n >= 0 => Ok(*n as u64),
        other => Err(bad_type(key, "a nonnegative integer", other)),
    }
}

impl Overlay {
    pub fn load(command: &str, allowed: &[&str], path: Option<&Path>) -> Result<Overlay, CliError> {
        let mut table = toml::Table::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            let root: toml::Table = text
                .parse()
                .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?;
            for (k, v) in &root {
                if v.is_table() {
                    if !COMMANDS.contains(&k.as_str()) {
                        return Err(CliError::Config(format!(
                            "unknown section [{k}] in {}",
                            p.display()
                        )));
                    }
                    continue;
                }
                if !ALL_KEYS.contains(&k.as_str()) {
                    return Err(CliError::Config(format!(
                        "unknown top-level key `{k}` in {}",
                        p.display()
                    )));
                }
                table.insert(k.clone(), v.clone());
            }
            if let Some(sec) = root.get(command).and_then(|v| v.as_table()) {
                for (k, v) in sec {
                    if !allowed.contains(&k.as_str()) {
                        return Err(CliError::Config(format!(
                            "unknown key `{k}` in section [{command}] of {}",
                            p.display()
                        )));
                    }
                    table.insert(k.clone(), v.clone());
                }
            }
        }
        let env_seed = match std::env::var("SNAKELAB_SEED") {
            Ok(s) => Some(s.trim().parse::<u64>().map_err(|_| {
                CliError::Config(format!("SNAKELAB_SEED must be an unsigned integer (got `{s}`)"))
            })?),
            Err(_) => None,
        };
        Ok(Overlay { table, env_seed })
    }

    pub fn seed(&self, cli: Option<u64>) -> Result<u64, CliError> {
        if let Some(v) = cli {
            return Ok(v);
        }
        if let Some(v) = self.table.get("seed") {
            return coerce_u64("seed", v);
        }
        Ok(self.env_seed.unwrap_or(0))
    }

    pub fn f64(&self, key: &str, cli: Option<f64>, default: f64) -> Result<f64, CliError> {
        if let Some(v) = cli {
            return Ok(v);
        }
        match self.table.get(key) {
            Some(v) => coerce_f64(key, v),
            None => Ok(default),
        }
    }

    pub fn u64(&self, key: &str, cli: Option<u64>, default: u64) -> Result<u64, CliError> {
        if let Some(v) = cli {
            return Ok(v);
        }
        match self.table.get(key) {
            Some(v) => coerce_u64(key, v),
            None => Ok(default),
        }
    }

    pub fn usize(&self, key: &str, cli: Option<usize>, default: usize) -> Result<usize, CliError> {
        if let Some(v) = cli {
            return Ok(v);
        }
        match self.table.get(key) {
            Some(v) => coerce_u64(key, v).map(|n| n as usize),
            None => Ok(default),
        }
    }

    /// Age or width list: a single CLI value replaces the whole list.
    pub fn f64_list(
        &self,
        key: &str,
        cli: Option<f64>,
        default: Vec<f64>,
    ) -> Result<Vec<f64>, CliError> {
        if let Some(v) = cli {
            return Ok(vec![v]);
        }
        match self.table.get(key) {
            Some(toml::Value::Array(xs)) => {
                if xs.is_empty() {
                    return Err(CliError::Config(format!("key `{key}` must not be empty")));
                }
                xs.iter().map(|v| coerce_f64(key, v)).collect()
            }
            Some(v) => coerce_f64(key, v).map(|x| vec![x]),
            None => Ok(default),
        }
    }

    pub fn figure_kind(&self, cli: Option<FigureKind>) -> Result<FigureKind, CliError> {
        if let Some(k) = cli {
            return Ok(k);
        }
        match self.table.get("kind") {
            Some(toml::Value::String(s)) => FigureKind::parse(s).ok_or_else(|| {
                CliError::Config(format!(
                    "key `kind` must be one of contour-tree, age-process, downcrossings (got `{s}`)"
                ))
            }),
            Some(v) => Err(bad_type("kind", "a string", v)),
            None => Ok(FigureKind::ContourTree),
        }
    }

    /// One knob, three spellings: eps, h = eps/2, gamma = 4/eps. CLI values
    /// shadow file values as a tier; within a tier all given spellings must
    /// agree.
    pub fn resolve_eps(&self, cli: &CommonOpts, default_eps: f64) -> Result<f64, CliError> {
        let mut cand: Vec<(String, f64)> = Vec::new();
        if let Some(e) = cli.eps {
            cand.push(("--eps".into(), e));
        }
        if let Some(hv) = cli.h {
            cand.push(("--h".into(), 2.0 * hv));
        }
        if let Some(g) = cli.gamma {
            positive("--gamma", g)?;
            cand.push(("--gamma".into(), 4.0 / g));
        }
        if cand.is_empty() {
            if let Some(v) = self.table.get("eps") {
                cand.push(("eps".into(), coerce_f64("eps", v)?));
            }
            if let Some(v) = self.table.get("h") {
                cand.push(("h".into(), 2.0 * coerce_f64("h", v)?));
            }
            if let Some(v) = self.table.get("gamma") {
                let g = coerce_f64("gamma", v)?;
                positive("gamma", g)?;
                cand.push(("gamma".into(), 4.0 / g));
            }
        }
        let Some((first_name, first)) = cand.first().cloned() else {
            return Ok(default_eps);
        };
        for (name, v) in &cand[1..] {
            if (v - first).abs() > 1e-9 * first.abs().max(1.0) {
                return Err(CliError::Config(format!(
                    "{first_name} and {name} disagree: eps would be {first} vs {v}"
                )));
            }
        }
        positive(&first_name, first)?;
        Ok(first)
    }
}

pub fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive (got {v})")))
    }
}

pub fn nonneg(name: &str, v: f64) -> Result<f64, CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be nonnegative (got {v})")))
    }
}
