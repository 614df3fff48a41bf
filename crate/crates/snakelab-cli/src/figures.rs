//! Layered SVG figures of single realizations. A figure is materialized
//! from (seed, item) with the same streams the experiments consume and
//! rendered with fixed numeric formatting, so a given configuration always
//! produces identical bytes.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::json;

use snakelab::erasure::{build_tree, effective_threshold, h_erase, AlternatingWalk, ErasedTree};
use snakelab::excursion::{
    count_downcrossings, sample_excursion_conditioned, sample_reflecting_bm, Excursion, GridPath,
};
use snakelab::motion::{mark_tree, passage_table, Passage};
use snakelab::rng::{rng_for, tag};

use crate::config::{nonneg, positive, CliError, FigureKind, FigureOpts, OutputFormat, Overlay};
use crate::report::{ensure_dir, write_json, Outcome, RunReport};

const EMIT_FIGURE_KEYS: &[&str] = &[
    "seed",
    "eps",
    "h",
    "gamma",
    "dt",
    "max_points",
    "c",
    "ctilde",
    "s",
    "level",
    "kind",
    "item",
];

#[derive(Serialize)]
struct FigureConfig {
    seed: u64,
    kind: &'static str,
    item: u64,
    h: f64,
    dt: f64,
    max_points: usize,
    c: f64,
    ctilde: f64,
    s: f64,
    level: f64,
}

pub fn emit(f: &FigureOpts) -> Result<Outcome, CliError> {
    let o = &f.common;
    let ov = Overlay::load("emit-figure", EMIT_FIGURE_KEYS, o.config.as_deref())?;
    let seed = ov.seed(o.seed)?;
    let kind = ov.figure_kind(f.kind)?;
    let eps = ov.resolve_eps(o, 1.0)?;
    let cfg = FigureConfig {
        seed,
        kind: kind.slug(),
        item: ov.u64("item", f.item, 0)?,
        h: eps / 2.0,
        dt: positive("dt", ov.f64("dt", o.dt, 1e-4)?)?,
        max_points: ov.usize("max_points", None, 2_000_000)?,
        c: nonneg("c", ov.f64("c", o.c, 1.0)?)?,
        ctilde: positive("ctilde", ov.f64("ctilde", o.ctilde, 2.0)?)?,
        s: nonneg("s", ov.f64("s", o.s, 0.5)?)?,
        level: positive("level", ov.f64("level", f.level, 0.3)?)?,
    };
    let svg = match kind {
        FigureKind::ContourTree => contour_tree(&cfg)?,
        FigureKind::AgeProcess => age_process(&cfg)?,
        FigureKind::Downcrossings => downcrossings(&cfg)?,
    };
    let dir = crate::commands::out_dir(o);
    ensure_dir(&dir)?;
    let path = dir.join(format!("{}.svg", kind.slug()));
    std::fs::write(&path, svg.as_bytes())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    for fmt in &o.format {
        match fmt {
            OutputFormat::Svg => {}
            OutputFormat::Json => {
                let report =
                    RunReport::new("emit-figure", seed, json!({ "figure": cfg }), Vec::new(), 1.0);
                let p = write_json(&report, &dir)?;
                println!("wrote {}", p.display());
            }
            OutputFormat::Csv => {
                return Err(CliError::Config(
                    "emit-figure writes svg (and optionally json), not csv".into(),
                ))
            }
        }
    }
    Ok(Outcome { pass: true, truncation_over: false })
}

struct Realization {
    exc: Excursion,
    walk: AlternatingWalk,
    tree: ErasedTree,
}

fn materialize(cfg: &FigureConfig) -> Result<Realization, CliError> {
    let mut rng = rng_for(cfg.seed, tag::EXCURSION, cfg.item);
    let exc = sample_excursion_conditioned(cfg.h, cfg.dt, cfg.max_points, &mut rng);
    // Plain erasure keeps the dashed contour on heights the drawn path
    // actually attains; the tree is built from the same walk it overlays.
    let walk = h_erase(&exc.path, cfg.h);
    let tree = build_tree(&walk).map_err(|e| {
        CliError::Config(format!(
            "item {} yields no erased tree at h = {} ({e}); raise max_points or pick another item",
            cfg.item, cfg.h
        ))
    })?;
    Ok(Realization { exc, walk, tree })
}

const W: f64 = 960.0;
const H: f64 = 540.0;
const ML: f64 = 58.0;
const MR: f64 = 18.0;
const MT: f64 = 48.0;
const MB: f64 = 50.0;

struct Frame {
    x0: f64,
    y0: f64,
    xs: f64,
    ys: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Frame {
        Frame { x0, y0, xs: (W - ML - MR) / (x1 - x0), ys: (H - MT - MB) / (y1 - y0) }
    }

    fn x(&self, wx: f64) -> f64 {
        ML + (wx - self.x0) * self.xs
    }

    fn y(&self, wy: f64) -> f64 {
        H - MB - (wy - self.y0) * self.ys
    }
}

/// Hundredths of a pixel: invisible rounding, stable bytes.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Tick label: up to three decimals with trailing zeros trimmed.
fn label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.into()
    }
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str) -> Svg {
        let mut body = String::with_capacity(1 << 16);
        let _ = writeln!(
            body,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\">"
        );
        let _ = writeln!(body, "<rect width=\"{W}\" height=\"{H}\" fill=\"#ffffff\"/>");
        let mut svg = Svg { body };
        svg.text(W / 2.0, 26.0, 15.0, "middle", "#222222", title);
        svg
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64, dash: Option<&str>) {
        if pts.len() < 2 {
            return;
        }
        let mut d = String::with_capacity(pts.len() * 12);
        for (i, (x, y)) in pts.iter().enumerate() {
            if i > 0 {
                d.push(' ');
            }
            let _ = write!(d, "{},{}", px(*x), px(*y));
        }
        let dash = dash.map(|v| format!(" stroke-dasharray=\"{v}\"")).unwrap_or_default();
        let _ = writeln!(
            self.body,
            "<polyline points=\"{d}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\"{dash}/>"
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64, dash: Option<&str>) {
        let dash = dash.map(|v| format!(" stroke-dasharray=\"{v}\"")).unwrap_or_default();
        let _ = writeln!(
            self.body,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{stroke}\" stroke-width=\"{width}\"{dash}/>",
            px(x1),
            px(y1),
            px(x2),
            px(y2)
        );
    }

    fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str, stroke: Option<&str>) {
        let stroke = stroke
            .map(|s| format!(" stroke=\"{s}\" stroke-width=\"1.1\""))
            .unwrap_or_default();
        let _ = writeln!(
            self.body,
            "<circle cx=\"{}\" cy=\"{}\" r=\"{r}\" fill=\"{fill}\"{stroke}/>",
            px(cx),
            px(cy)
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, fill: &str, s: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{}\" y=\"{}\" font-size=\"{size}\" text-anchor=\"{anchor}\" fill=\"{fill}\">{}</text>",
            px(x),
            px(y),
            escape(s)
        );
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(svg: &mut Svg, fr: &Frame, x1: f64, y1: f64, xlab: &str, ylab: &str) {
    let base = fr.y(fr.y0);
    let left = fr.x(fr.x0);
    svg.line(left, base, fr.x(x1), base, "#444444", 1.0, None);
    svg.line(left, base, left, fr.y(y1), "#444444", 1.0, None);
    for k in 0..=4 {
        let wx = fr.x0 + (x1 - fr.x0) * k as f64 / 4.0;
        let x = fr.x(wx);
        svg.line(x, base, x, base + 4.0, "#444444", 1.0, None);
        svg.text(x, base + 17.0, 11.0, "middle", "#444444", &label(wx));
        let wy = fr.y0 + (y1 - fr.y0) * k as f64 / 4.0;
        let y = fr.y(wy);
        svg.line(left - 4.0, y, left, y, "#444444", 1.0, None);
        svg.text(left - 7.0, y + 4.0, 11.0, "end", "#444444", &label(wy));
    }
    svg.text(fr.x(x1), base + 32.0, 12.0, "end", "#444444", xlab);
    svg.text(left, fr.y(y1) - 8.0, 12.0, "start", "#444444", ylab);
}

fn legend(svg: &mut Svg, entries: &[(&str, bool, &str)]) {
    let x = ML + 12.0;
    let mut y = MT + 10.0;
    for (color, dashed, name) in entries {
        svg.line(x, y, x + 26.0, y, color, 2.0, dashed.then_some("6 4"));
        svg.text(x + 32.0, y + 4.0, 11.5, "start", "#333333", name);
        y += 16.0;
    }
}

/// Min-max decimation over index buckets: at most 2 points per bucket plus
/// the endpoints, preserving every rendered extremum.
pub fn decimate_path(path: &GridPath, buckets: usize) -> Vec<(f64, f64)> {
    let n = path.len();
    if n <= 2 * buckets {
        return (0..n).map(|k| (path.time(k), path.values[k])).collect();
    }
    let mut out = Vec::with_capacity(2 * buckets + 2);
    out.push((path.time(0), path.values[0]));
    for b in 0..buckets {
        let lo = 1 + b * (n - 2) / buckets;
        let hi = 1 + (b + 1) * (n - 2) / buckets;
        if lo >= hi {
            continue;
        }
        let (mut kmin, mut kmax) = (lo, lo);
        for k in lo..hi {
            if path.values[k] < path.values[kmin] {
                kmin = k;
            }
            if path.values[k] > path.values[kmax] {
                kmax = k;
            }
        }
        if kmin == kmax {
            out.push((path.time(kmin), path.values[kmin]));
        } else {
            let (a, b2) = if kmin < kmax { (kmin, kmax) } else { (kmax, kmin) };
            out.push((path.time(a), path.values[a]));
            out.push((path.time(b2), path.values[b2]));
        }
    }
    out.push((path.time(n - 1), path.values[n - 1]));
    out
}

fn draw_tree(svg: &mut Svg, fr: &Frame, tree: &ErasedTree, color: &str, width: f64, tips: bool) {
    for e in &tree.edges {
        let x = fr.x(e.gamma);
        svg.line(x, fr.y(e.y), x, fr.y(e.z), color, width, None);
        if let Some(p) = e.parent {
            svg.line(fr.x(tree.edge(p).gamma), fr.y(e.y), x, fr.y(e.y), color, width, None);
        }
        if tips {
            if e.is_leaf() {
                svg.circle(x, fr.y(e.z), 2.4, color, None);
            } else {
                svg.circle(x, fr.y(e.z), 2.4, "#ffffff", Some(color));
            }
        }
    }
}

fn contour_tree(cfg: &FigureConfig) -> Result<String, CliError> {
    let r = materialize(cfg)?;
    let path = &r.exc.path;
    let x1 = path.end_time();
    let y1 = r.exc.grid_max().max(cfg.h) * 1.08;
    let fr = Frame::new(0.0, x1, 0.0, y1);
    let trunc = if r.exc.truncated { ", truncated" } else { "" };
    let mut svg = Svg::new(&format!(
        "excursion with erased contour and genealogy (h = {}, seed = {}, item = {}{trunc})",
        label(cfg.h),
        cfg.seed,
        cfg.item
    ));
    axes(&mut svg, &fr, x1, y1, "t", "height");
    svg.line(fr.x(0.0), fr.y(cfg.h), fr.x(x1), fr.y(cfg.h), "#bbbbbb", 0.8, Some("2 4"));
    svg.text(fr.x(x1) - 4.0, fr.y(cfg.h) - 5.0, 11.0, "end", "#999999", "h");

    let pts: Vec<(f64, f64)> =
        decimate_path(path, 1300).iter().map(|&(t, v)| (fr.x(t), fr.y(v))).collect();
    svg.polyline(&pts, "#111111", 1.2, None);

    let prof: Vec<(f64, f64)> =
        r.walk.erased_profile().iter().map(|&(t, z)| (fr.x(t), fr.y(z))).collect();
    svg.polyline(&prof, "#3b6fb5", 1.4, Some("7 4"));

    draw_tree(&mut svg, &fr, &r.tree, "#e07b22", 2.0, true);
    legend(
        &mut svg,
        &[
            ("#111111", false, "contour"),
            ("#3b6fb5", true, "h-erased walk"),
            ("#e07b22", false, "genealogical tree"),
        ],
    );
    Ok(svg.finish())
}

fn age_process(cfg: &FigureConfig) -> Result<String, CliError> {
    let r = materialize(cfg)?;
    let mut mrng = rng_for(cfg.seed, tag::MARKS, cfg.item);
    let marks = mark_tree(&r.tree, 0.0, cfg.c, cfg.ctilde, &mut mrng);
    let table = passage_table(&r.tree, &marks, cfg.s);

    let path = &r.exc.path;
    let x1 = path.end_time();
    let y1 = r.exc.grid_max().max(cfg.h) * 1.08;
    let fr = Frame::new(0.0, x1, 0.0, y1);

    let mut active = 0u64;
    let mut dormant = 0u64;
    for p in &table.per_edge {
        if let Passage::Here { attained, .. } = p {
            if *attained {
                active += 1;
            } else {
                dormant += 1;
            }
        }
    }
    let trunc = if r.exc.truncated { ", truncated" } else { "" };
    let mut svg = Svg::new(&format!(
        "age curve at s = {}: {active} active, {dormant} dormant (h = {}, seed = {}, item = {}{trunc})",
        label(cfg.s),
        label(cfg.h),
        cfg.seed,
        cfg.item
    ));
    axes(&mut svg, &fr, x1, y1, "t", "height");

    draw_tree(&mut svg, &fr, &r.tree, "#cccccc", 1.2, false);
    // Sleep marks: where a lineage subordinator jumps.
    for e in &r.tree.edges {
        for &(loc, _) in &marks.edges[e.id - 1].jumps {
            svg.circle(fr.x(e.gamma), fr.y(loc), 1.8, "#ffffff", Some("#999999"));
        }
    }

    let pts: Vec<(f64, f64)> =
        decimate_path(path, 1300).iter().map(|&(t, v)| (fr.x(t), fr.y(v))).collect();
    svg.polyline(&pts, "#111111", 1.2, None);

    // The head of the snake at contour time t has age level s at height
    // min(f_t, fp) where fp is the passage height of the leaf lineage the
    // sweep attributes t to (infinite when the lineage dies younger).
    let m = r.walk.m();
    let mut bounds = Vec::with_capacity(m / 2 + 2);
    bounds.push(0usize);
    for p in (2..m).step_by(2) {
        bounds.push(r.walk.points[p].ext_k);
    }
    bounds.push(path.len());
    let n_leaves = bounds.len() - 1;

    let dec = decimate_path(path, 1300);
    let mut curve = Vec::with_capacity(dec.len());
    let mut phase = 0usize;
    let mut k = 0usize;
    for &(t, v) in &dec {
        // Decimated points move forward in grid order; recover the index.
        while k + 1 < path.len() && path.time(k + 1) <= t {
            k += 1;
        }
        while phase + 1 < n_leaves && k >= bounds[phase + 1] {
            phase += 1;
        }
        let leaf = 2 * phase + 1;
        let fp = table.fp[leaf - 1];
        curve.push((fr.x(t), fr.y(v.min(fp))));
    }
    svg.polyline(&curve, "#c22e2e", 1.8, None);

    // Atoms at age s: one marker per passage, filled while dormant.
    for (i, p) in table.per_edge.iter().enumerate() {
        if let Passage::Here { height, attained } = *p {
            let x = fr.x(r.tree.edge(i + 1).gamma);
            if attained {
                svg.circle(x, fr.y(height), 3.0, "#ffffff", Some("#c22e2e"));
            } else {
                svg.circle(x, fr.y(height), 3.0, "#c22e2e", None);
            }
        }
    }

    legend(
        &mut svg,
        &[
            ("#111111", false, "contour"),
            ("#cccccc", false, "tree with sleep marks"),
            ("#c22e2e", false, "age curve and atoms"),
        ],
    );
    Ok(svg.finish())
}

fn downcrossings(cfg: &FigureConfig) -> Result<String, CliError> {
    let mut rng = rng_for(cfg.seed, tag::EXCURSION, cfg.item);
    let path = sample_reflecting_bm(0.0, cfg.dt, cfg.max_points, &mut rng);
    let trig = effective_threshold(cfg.h, cfg.dt);
    let rep = count_downcrossings(&path, cfg.level, trig);

    let x1 = path.end_time();
    let y1 = path.max().max(cfg.level + cfg.h) * 1.08;
    let fr = Frame::new(0.0, x1, 0.0, y1);
    let mut svg = Svg::new(&format!(
        "reflected path: {} downcrossings of [{}, {}] (seed = {}, item = {})",
        rep.count,
        label(cfg.level),
        label(cfg.level + cfg.h),
        cfg.seed,
        cfg.item
    ));
    axes(&mut svg, &fr, x1, y1, "t", "value");

    svg.line(fr.x(0.0), fr.y(cfg.level), fr.x(x1), fr.y(cfg.level), "#777777", 1.0, None);
    svg.text(fr.x(x1) - 4.0, fr.y(cfg.level) - 5.0, 11.0, "end", "#777777", "level");
    let top = cfg.level + cfg.h;
    svg.line(fr.x(0.0), fr.y(top), fr.x(x1), fr.y(top), "#777777", 1.0, Some("6 4"));
    svg.text(fr.x(x1) - 4.0, fr.y(top) - 5.0, 11.0, "end", "#777777", "level + h");

    let pts: Vec<(f64, f64)> =
        decimate_path(&path, 1300).iter().map(|&(t, v)| (fr.x(t), fr.y(v))).collect();
    svg.polyline(&pts, "#111111", 1.1, None);

    // Completion markers; stride keeps crowded figures readable.
    let stride = (rep.completion_indices.len() / 400).max(1);
    for &k in rep.completion_indices.iter().step_by(stride) {
        svg.circle(fr.x(path.time(k)), fr.y(cfg.level), 2.6, "#c22e2e", None);
    }

    legend(
        &mut svg,
        &[("#111111", false, "reflected path"), ("#c22e2e", false, "downcrossing completions")],
    );
    Ok(svg.finish())
}
