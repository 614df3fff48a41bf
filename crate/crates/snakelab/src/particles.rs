//! Particle measures read off a marked tree, four ways.
//!
//! The on/off population at real time s is constructed twice: once by
//! enumerating tree edges whose time change first reaches s inside them,
//! and once by sweeping the contour and counting residual episodes. The
//! two constructions must produce identical atom multisets on every
//! realization; nothing in the sweep may peek at the edge enumeration.
//!
//! Plain branching atoms slice the tree at a fixed height; damped atoms
//! additionally require a mark-free lineage, so they embed into the plain
//! slice atom for atom. A forward Gillespie simulation of the same
//! population provides the law to test counts against.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::erasure::{AlternatingWalk, ErasedTree};
use crate::excursion::GridPath;
use crate::motion::{Passage, PassageTable, TreeMarks};
use crate::rng::SimRng;

/// One particle, addressed by the tree point it occupies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub edge: usize,
    pub height: f64,
    pub active: bool,
}

/// Canonical order so multisets compare as sorted vectors.
pub fn normalize_atoms(mut atoms: Vec<Atom>) -> Vec<Atom> {
    atoms.sort_by(|a, b| {
        a.edge
            .cmp(&b.edge)
            .then(a.height.total_cmp(&b.height))
            .then(a.active.cmp(&b.active))
    });
    atoms
}

/// Population at real time s by direct edge enumeration: one atom per edge
/// containing the passage, plus the base atom while s precedes the wake
/// time.
pub fn oobbm_from_snake_tree(tree: &ErasedTree, table: &PassageTable) -> Vec<Atom> {
    let mut atoms = Vec::new();
    if table.base {
        atoms.push(Atom { edge: tree.root, height: 0.0, active: false });
    }
    for (i, p) in table.per_edge.iter().enumerate() {
        if let Passage::Here { height, attained } = *p {
            atoms.push(Atom { edge: i + 1, height, active: attained });
        }
    }
    normalize_atoms(atoms)
}

/// Population at real time s by sweeping the contour: an episode opens
/// when the residual above the current lineage's passage height exceeds
/// the erasure threshold and closes when the contour falls back to it.
/// Episodes may span branch points; the passage height is then shared by
/// both lineages, so the open episode carries its own completion level.
pub fn oobbm_from_snake_downcross(
    path: &GridPath,
    walk: &AlternatingWalk,
    table: &PassageTable,
) -> Vec<Atom> {
    let m = walk.m();
    assert!(m >= 1, "sweep needs a nonempty walk");
    let h_eff = walk.h - walk.delta;

    // Leaf phases are delimited by the branch-point minima of the contour.
    let n_leaves = (m + 1) / 2;
    let mut bounds = Vec::with_capacity(n_leaves + 1);
    bounds.push(0usize);
    for p in (2..m).step_by(2) {
        bounds.push(walk.points[p].ext_k);
    }
    bounds.push(path.len());

    let mut atoms = Vec::new();
    let mut open: Option<(f64, usize, bool)> = None;
    let mut phase = 0usize;
    for (k, &f) in path.values.iter().enumerate() {
        while phase + 1 < n_leaves && k >= bounds[phase + 1] {
            phase += 1;
        }
        if let Some((efp, ehost, eatt)) = open {
            if f <= efp {
                atoms.push(Atom { edge: ehost, height: efp, active: eatt });
                open = None;
            }
        }
        if open.is_none() {
            let leaf = 2 * phase + 1;
            let fp = table.fp[leaf - 1];
            if fp.is_finite() && f - h_eff > fp {
                open = Some((fp, table.host[leaf - 1], table.attained[leaf - 1]));
            }
        }
    }
    // Only a truncated contour can leave an episode pending; close it so
    // the count still matches the edge enumeration.
    if let Some((efp, ehost, eatt)) = open {
        atoms.push(Atom { edge: ehost, height: efp, active: eatt });
    }
    normalize_atoms(atoms)
}

/// Plain branching population: the tree sliced at height y.
pub fn bbm_from_snake(tree: &ErasedTree, y: f64) -> Vec<Atom> {
    assert!(y >= 0.0);
    let mut atoms = Vec::new();
    for e in &tree.edges {
        if e.y <= y && y < e.z {
            atoms.push(Atom { edge: e.id, height: y, active: true });
        }
    }
    normalize_atoms(atoms)
}

/// Damped population: the slice restricted to lineages with no sleep mark
/// at or below y. Initially dormant realizations contribute nothing.
pub fn damped_bbm_from_snake(tree: &ErasedTree, marks: &TreeMarks, y: f64) -> Vec<Atom> {
    assert!(y >= 0.0);
    if marks.s0 > 0.0 {
        return Vec::new();
    }
    // Lowest sleep mark on the lineage through each edge.
    let mut kill = vec![f64::INFINITY; tree.len()];
    let mut stack = vec![tree.root];
    while let Some(id) = stack.pop() {
        let inherited = match tree.edge(id).parent {
            None => f64::INFINITY,
            Some(p) => kill[p - 1],
        };
        let own = marks.edges[id - 1]
            .jumps
            .first()
            .map_or(f64::INFINITY, |j| j.0);
        kill[id - 1] = inherited.min(own);
        for &ch in tree.children_of(id) {
            stack.push(ch);
        }
    }
    let mut atoms = Vec::new();
    for e in &tree.edges {
        if e.y <= y && y < e.z && kill[e.id - 1] > y {
            atoms.push(Atom { edge: e.id, height: y, active: true });
        }
    }
    normalize_atoms(atoms)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardCounts {
    pub active: u64,
    pub dormant: u64,
    pub events: u64,
    pub truncated: bool,
}

/// Forward Gillespie simulation of the on/off population: active particles
/// split at gamma/2, die at gamma/2, fall asleep at c; dormant particles
/// wake at ctilde. Counts only; positions are irrelevant to count laws.
pub fn forward_oobbm(
    gamma: f64,
    c: f64,
    ctilde: f64,
    init_active: u64,
    init_dormant: u64,
    s: f64,
    max_events: u64,
    rng: &mut SimRng,
) -> ForwardCounts {
    assert!(gamma >= 0.0 && c >= 0.0 && ctilde > 0.0 && s >= 0.0);
    let mut na = init_active;
    let mut nd = init_dormant;
    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        let rate = na as f64 * (gamma + c) + nd as f64 * ctilde;
        if rate == 0.0 {
            break;
        }
        t += Exp::new(rate).expect("positive total rate").sample(rng);
        if t >= s {
            break;
        }
        if events >= max_events {
            return ForwardCounts { active: na, dormant: nd, events, truncated: true };
        }
        events += 1;
        let u = rng.random::<f64>() * rate;
        let a = na as f64;
        if u < a * gamma / 2.0 {
            na += 1;
        } else if u < a * gamma {
            na -= 1;
        } else if u < a * (gamma + c) {
            na -= 1;
            nd += 1;
        } else {
            nd -= 1;
            na += 1;
        }
    }
    ForwardCounts { active: na, dormant: nd, events, truncated: false }
}
