//! h-erasure of a contour into an alternating walk, and the genealogical
//! tree hanging off that walk.
//!
//! The walk records the stopping times where the contour first rises h
//! above its running minimum (beta, even indices) or first falls h below
//! its running maximum (alpha, odd indices). Even walk values are branch
//! heights, odd walk values are leaf heights, and edge p of the tree is
//! topped at height Z_p. Crossing times are refined linearly inside the
//! grid cell that triggered them; recorded heights come straight from the
//! running grid extrema, so they are exact functions of the grid values.
//!
//! Grid extrema understate continuum extrema by about 0.5826*sqrt(dt) in
//! expectation (the Asmussen-Glynn-Pitman constant). [`h_erase`] keeps the
//! textbook rule; [`h_erase_corrected`] compensates thresholds and recorded
//! heights by that constant, which sampled-path pipelines need at the
//! default grid resolution. The first crossing is never compensated: the
//! starting minimum of an excursion is pinned at 0, not a Brownian minimum.

use crate::error::{Error, Result};
use crate::excursion::GridPath;

pub const EXTREMUM_GAP_COEFF: f64 = 0.582597;

/// Expected gap between continuum and grid running extrema at step dt.
pub fn extremum_gap(dt: f64) -> f64 {
    EXTREMUM_GAP_COEFF * dt.sqrt()
}

/// Threshold actually compared against grid values by the corrected rule.
pub fn effective_threshold(h: f64, dt: f64) -> f64 {
    h - extremum_gap(dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkPoint {
    /// Interpolated crossing time gamma_p.
    pub gamma: f64,
    /// Walk value Z_p.
    pub z: f64,
    /// Time of the grid extremum backing this point.
    pub ext_time: f64,
    /// Raw grid extremum (running min for even p, running max for odd p).
    pub ext_value: f64,
    /// Node index of that extremum (grid index for grid inputs).
    pub ext_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlternatingWalk {
    pub h: f64,
    /// Extremum compensation that was applied (0 for the plain rule).
    pub delta: f64,
    /// gamma_0..gamma_M. Empty when the contour never rises h above its
    /// running minimum.
    pub points: Vec<WalkPoint>,
    /// gamma_{M+1}; the final walk value Z_{M+1} = 0 is implicit.
    pub sigma: f64,
}

impl AlternatingWalk {
    pub fn m(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn z(&self, p: usize) -> f64 {
        if p == self.points.len() {
            0.0
        } else {
            self.points[p].z
        }
    }

    pub fn gamma(&self, p: usize) -> f64 {
        if p == self.points.len() {
            self.sigma
        } else {
            self.points[p].gamma
        }
    }

    /// Polyline of the erased contour through (gamma_p, Z_p).
    pub fn erased_profile(&self) -> Vec<(f64, f64)> {
        let mut nodes = Vec::with_capacity(self.points.len() + 3);
        if self.points.is_empty() {
            return vec![(0.0, 0.0), (self.sigma, 0.0)];
        }
        nodes.push((0.0, 0.0));
        for p in &self.points {
            nodes.push((p.gamma, p.z));
        }
        nodes.push((self.sigma, 0.0));
        nodes
    }

    /// Polyline through the realized extrema backing the walk, keeping the
    /// full heights. Re-erasing this skeleton at the same h reproduces the
    /// Z sequence exactly; see the idempotence tests.
    pub fn extrema_skeleton(&self) -> Vec<(f64, f64)> {
        let mut nodes = Vec::with_capacity(self.points.len() + 2);
        nodes.push((0.0, 0.0));
        for p in &self.points {
            nodes.push((p.ext_time, p.ext_value));
        }
        nodes.push((self.sigma, 0.0));
        nodes
    }
}

enum Scan {
    /// Tracking a running minimum, waiting for the contour to rise h above it.
    Rising { m: f64, m_t: f64, m_k: usize, first: bool },
    /// Tracking a running maximum, waiting for the contour to fall h below it.
    Falling { s: f64, s_t: f64, s_k: usize },
}

/// Incremental erasure: push nodes one at a time, then finish. Lets large
/// contours be erased as they are sampled, without storing the path.
pub struct WalkBuilder {
    h: f64,
    delta: f64,
    h_eff: f64,
    points: Vec<WalkPoint>,
    state: Option<Scan>,
    prev: Option<(f64, f64)>,
    last_t: f64,
    k: usize,
}

impl WalkBuilder {
    pub fn new(h: f64, delta: f64) -> Self {
        assert!(h > 0.0, "h must be positive");
        assert!(delta >= 0.0 && delta < h, "correction must stay below h");
        WalkBuilder {
            h,
            delta,
            h_eff: h - delta,
            points: Vec::new(),
            state: None,
            prev: None,
            last_t: 0.0,
            k: 0,
        }
    }

    pub fn push(&mut self, t: f64, v: f64) {
        let k = self.k;
        self.k += 1;
        self.last_t = t;
        match &mut self.state {
            None => self.state = Some(Scan::Rising { m: v, m_t: t, m_k: k, first: true }),
            Some(Scan::Rising { m, m_t, m_k, first }) => {
                if v < *m {
                    *m = v;
                    *m_t = t;
                    *m_k = k;
                }
                let thr = if *first { *m + self.h } else { *m + self.h_eff };
                if v >= thr {
                    let gamma = match self.prev {
                        Some((pt, pv)) if v > pv => pt + (thr - pv) / (v - pv) * (t - pt),
                        _ => t,
                    };
                    let z = if *first {
                        0.0
                    } else {
                        // Floor protects rare sub-correction valleys from
                        // crossing their neighbours after compensation.
                        (*m - self.delta).max(*m * 1e-3)
                    };
                    self.points.push(WalkPoint {
                        gamma,
                        z,
                        ext_time: *m_t,
                        ext_value: *m,
                        ext_k: *m_k,
                    });
                    // v is below the new scan's trigger by construction, so
                    // seeding from it loses no crossing.
                    self.state = Some(Scan::Falling { s: v, s_t: t, s_k: k });
                }
            }
            Some(Scan::Falling { s, s_t, s_k }) => {
                if v > *s {
                    *s = v;
                    *s_t = t;
                    *s_k = k;
                }
                let thr = *s - self.h_eff;
                if v <= thr {
                    let gamma = match self.prev {
                        Some((pt, pv)) if pv > v => pt + (pv - thr) / (pv - v) * (t - pt),
                        _ => t,
                    };
                    self.points.push(WalkPoint {
                        gamma,
                        z: *s - self.h_eff,
                        ext_time: *s_t,
                        ext_value: *s,
                        ext_k: *s_k,
                    });
                    self.state = Some(Scan::Rising { m: v, m_t: t, m_k: k, first: false });
                }
            }
        }
        self.prev = Some((t, v));
    }

    pub fn finish(mut self) -> AlternatingWalk {
        // A walk must end on an alpha point; an unmatched trailing beta
        // (only possible on truncated input) is dropped so indices stay
        // alternating.
        if self.points.len() % 2 == 1 {
            self.points.pop();
        }
        AlternatingWalk { h: self.h, delta: self.delta, points: self.points, sigma: self.last_t }
    }
}

/// Core erasure over a node sequence (time, value). Grid inputs stream
/// their points; the skeleton tests pass small node lists directly.
pub fn erase_nodes<I>(nodes: I, h: f64, delta: f64) -> AlternatingWalk
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut b = WalkBuilder::new(h, delta);
    for (t, v) in nodes {
        b.push(t, v);
    }
    b.finish()
}

/// Textbook grid rule, no extremum compensation. Matches hand traces
/// exactly; prefer [`h_erase_corrected`] for sampled paths.
pub fn h_erase(path: &GridPath, h: f64) -> AlternatingWalk {
    let dt = path.dt;
    let t0 = path.t0;
    erase_nodes(
        path.values.iter().enumerate().map(|(k, &v)| (t0 + k as f64 * dt, v)),
        h,
        0.0,
    )
}

/// Grid rule with extremum compensation sized for this path's dt.
pub fn h_erase_corrected(path: &GridPath, h: f64) -> AlternatingWalk {
    let dt = path.dt;
    let t0 = path.t0;
    erase_nodes(
        path.values.iter().enumerate().map(|(k, &v)| (t0 + k as f64 * dt, v)),
        h,
        extremum_gap(dt),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Walk index p in 1..=M. Odd ids are leaf edges, even ids internal.
    pub id: usize,
    pub parent: Option<usize>,
    /// Lower height (attachment to the parent edge's top).
    pub y: f64,
    /// Upper height Z_p.
    pub z: f64,
    /// Stopping time of the walk vertex that tops this edge.
    pub gamma: f64,
}

impl Edge {
    pub fn len(&self) -> f64 {
        self.z - self.y
    }

    pub fn is_leaf(&self) -> bool {
        self.id % 2 == 1
    }
}

#[derive(Debug, Clone)]
pub struct ErasedTree {
    pub h: f64,
    /// edges[p-1] has id p.
    pub edges: Vec<Edge>,
    pub children: Vec<Vec<usize>>,
    pub root: usize,
    pub sigma: f64,
}

impl ErasedTree {
    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id - 1]
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn children_of(&self, id: usize) -> &[usize] {
        &self.children[id - 1]
    }

    /// Edge ids from the root to `id` inclusive.
    pub fn lineage(&self, id: usize) -> Vec<usize> {
        let mut chain = vec![id];
        let mut cur = id;
        while let Some(p) = self.edges[cur - 1].parent {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }
}

/// Tree from an alternating walk: every even vertex is a branch point,
/// every odd vertex a leaf, and the recursive split at the lowest branch
/// height is realized with nearest-smaller-valley stacks in O(M).
pub fn build_tree(walk: &AlternatingWalk) -> Result<ErasedTree> {
    let m = walk.m();
    if m == 0 {
        return Err(Error::EmptyWalk);
    }
    debug_assert!(m % 2 == 1, "complete walks end on an alpha point");

    let n_edges = m;
    let mut edges: Vec<Edge> = Vec::with_capacity(n_edges);
    for p in 1..=m {
        edges.push(Edge {
            id: p,
            parent: None,
            y: 0.0,
            z: walk.points[p].z,
            gamma: walk.points[p].gamma,
        });
    }

    // Valleys are walk indices 2, 4, ..., m-1.
    let valley_ids: Vec<usize> = (2..=m).step_by(2).collect();
    let heights: Vec<f64> = valley_ids.iter().map(|&p| walk.points[p].z).collect();
    let k = valley_ids.len();

    // Nearest strictly-smaller valley to the left, smaller-or-equal to the
    // right; the asymmetry breaks exact ties deterministically.
    let mut nsl = vec![usize::MAX; k];
    let mut nsr = vec![usize::MAX; k];
    let mut stack: Vec<usize> = Vec::new();
    for j in 0..k {
        while let Some(&top) = stack.last() {
            if heights[top] >= heights[j] {
                stack.pop();
            } else {
                break;
            }
        }
        if let Some(&top) = stack.last() {
            nsl[j] = top;
        }
        stack.push(j);
    }
    stack.clear();
    for j in (0..k).rev() {
        while let Some(&top) = stack.last() {
            if heights[top] > heights[j] {
                stack.pop();
            } else {
                break;
            }
        }
        if let Some(&top) = stack.last() {
            nsr[j] = top;
        }
        stack.push(j);
    }

    let mut root = None;
    for j in 0..k {
        let id = valley_ids[j];
        let (parent, y) = match (nsl[j], nsr[j]) {
            (usize::MAX, usize::MAX) => (None, 0.0),
            (l, usize::MAX) => (Some(valley_ids[l]), heights[l]),
            (usize::MAX, r) => (Some(valley_ids[r]), heights[r]),
            (l, r) => {
                if heights[l] >= heights[r] {
                    (Some(valley_ids[l]), heights[l])
                } else {
                    (Some(valley_ids[r]), heights[r])
                }
            }
        };
        edges[id - 1].parent = parent;
        edges[id - 1].y = y;
        if parent.is_none() {
            debug_assert!(root.is_none(), "two parentless branch edges");
            root = Some(id);
        }
    }

    // Leaf i has walk index 2i+1, flanked by valleys 2i and 2i+2 (height 0
    // beyond the walk ends); it attaches to the higher flank.
    let n_leaves = (m + 1) / 2;
    for i in 0..n_leaves {
        let id = 2 * i + 1;
        let left = if i >= 1 { Some(2 * i) } else { None };
        let right = if 2 * i + 2 <= m { Some(2 * i + 2) } else { None };
        let lh = left.map_or(0.0, |p| walk.points[p].z);
        let rh = right.map_or(0.0, |p| walk.points[p].z);
        let (parent, y) = if left.is_none() && right.is_none() {
            (None, 0.0)
        } else if lh >= rh {
            match left {
                Some(p) => (Some(p), lh),
                None => (right, rh),
            }
        } else {
            (right, rh)
        };
        edges[id - 1].parent = parent;
        edges[id - 1].y = y;
        if parent.is_none() {
            debug_assert!(root.is_none(), "leaf root in a walk with branch points");
            root = Some(id);
        }
    }

    let root = root.expect("a nonempty walk has exactly one root edge");
    let mut children = vec![Vec::new(); n_edges];
    for e in &edges {
        if let Some(p) = e.parent {
            children[p - 1].push(e.id);
        }
    }
    Ok(ErasedTree { h: walk.h, edges, children, root, sigma: walk.sigma })
}

#[derive(Debug, Clone, Default)]
pub struct TreeStats {
    pub edge_lengths: Vec<f64>,
    pub single_edge_trees: usize,
    pub tree_count: usize,
    pub edges_per_tree: Vec<usize>,
}

pub fn tree_statistics(trees: &[ErasedTree]) -> TreeStats {
    let mut stats = TreeStats::default();
    for t in trees {
        stats.tree_count += 1;
        stats.edges_per_tree.push(t.len());
        if t.len() == 1 {
            stats.single_edge_trees += 1;
        }
        for e in &t.edges {
            stats.edge_lengths.push(e.len());
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excursion::sample_excursion_conditioned;
    use crate::rng::{rng_for, tag};
    use proptest::prelude::*;

    fn hand_path() -> GridPath {
        GridPath::new(0.25, 0.0, vec![0.0, 2.0, 0.5, 1.8, 0.0])
    }

    #[test]
    fn hand_trace_walk() {
        // 0 -> 2 -> 0.5 -> 1.8 -> 0 erased at h=1 gives Z = (0, 1, 0.5, 0.8).
        let w = h_erase(&hand_path(), 1.0);
        assert_eq!(w.m(), 3);
        let zs: Vec<f64> = w.points.iter().map(|p| p.z).collect();
        assert_eq!(zs, vec![0.0, 1.0, 0.5, 0.8]);
        let gs: Vec<f64> = w.points.iter().map(|p| p.gamma).collect();
        let expect = [0.125, 0.25 + (1.0 / 1.5) * 0.25, 0.5 + (1.0 / 1.3) * 0.25, 0.75 + (1.0 / 1.8) * 0.25];
        for (g, e) in gs.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12, "gamma {g} vs {e}");
        }
        let exts: Vec<(f64, f64)> = w.points.iter().map(|p| (p.ext_time, p.ext_value)).collect();
        assert_eq!(exts, vec![(0.0, 0.0), (0.25, 2.0), (0.5, 0.5), (0.75, 1.8)]);
        assert_eq!(w.z(4), 0.0);
        assert_eq!(w.gamma(4), 1.0);
    }

    #[test]
    fn hand_trace_tree() {
        let w = h_erase(&hand_path(), 1.0);
        let t = build_tree(&w).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.root, 2);
        let e2 = t.edge(2);
        assert_eq!((e2.y, e2.z, e2.parent), (0.0, 0.5, None));
        let e1 = t.edge(1);
        assert_eq!((e1.y, e1.z, e1.parent), (0.5, 1.0, Some(2)));
        let e3 = t.edge(3);
        assert_eq!((e3.y, e3.z, e3.parent), (0.5, 0.8, Some(2)));
        assert_eq!(t.children_of(2), &[1, 3]);
        assert_eq!(t.lineage(3), vec![2, 3]);
    }

    #[test]
    fn five_edge_tree_structure() {
        // Peaks 6, 5, 7 with valleys 1, 2: Z = (0, 5, 1, 4, 2, 6).
        let p = GridPath::new(0.5, 0.0, vec![0.0, 6.0, 1.0, 5.0, 2.0, 7.0, 0.0]);
        let w = h_erase(&p, 1.0);
        let zs: Vec<f64> = w.points.iter().map(|q| q.z).collect();
        assert_eq!(zs, vec![0.0, 5.0, 1.0, 4.0, 2.0, 6.0]);
        let t = build_tree(&w).unwrap();
        assert_eq!(t.root, 2);
        assert_eq!((t.edge(2).y, t.edge(2).z), (0.0, 1.0));
        assert_eq!((t.edge(4).y, t.edge(4).parent), (1.0, Some(2)));
        assert_eq!((t.edge(1).y, t.edge(1).parent), (1.0, Some(2)));
        assert_eq!((t.edge(3).y, t.edge(3).parent), (2.0, Some(4)));
        assert_eq!((t.edge(5).y, t.edge(5).parent), (2.0, Some(4)));
    }

    #[test]
    fn below_threshold_contour_gives_empty_walk() {
        let p = GridPath::new(0.5, 0.0, vec![0.0, 0.5, 0.0]);
        let w = h_erase(&p, 1.0);
        assert_eq!(w.m(), 0);
        assert!(matches!(build_tree(&w), Err(Error::EmptyWalk)));
    }

    #[test]
    fn skeleton_reerasure_reproduces_walk_values() {
        let mut rng = rng_for(21, tag::EXCURSION, 4);
        for _ in 0..25 {
            let e = sample_excursion_conditioned(0.35, 1e-2, 60_000, &mut rng);
            if e.truncated {
                continue;
            }
            let w = h_erase(&e.path, 0.35);
            let w2 = erase_nodes(w.extrema_skeleton().into_iter(), 0.35, 0.0);
            assert_eq!(w.m(), w2.m());
            for (a, b) in w.points.iter().zip(&w2.points) {
                assert_eq!(a.z.to_bits(), b.z.to_bits(), "z mismatch");
            }
        }
    }

    #[test]
    fn branch_heights_survive_halving_h() {
        let mut rng = rng_for(22, tag::EXCURSION, 5);
        let mut checked = 0;
        for _ in 0..25 {
            let e = sample_excursion_conditioned(0.4, 1e-2, 60_000, &mut rng);
            if e.truncated {
                continue;
            }
            for (coarse, fine) in [
                (h_erase(&e.path, 0.4), h_erase(&e.path, 0.2)),
                (h_erase_corrected(&e.path, 0.4), h_erase_corrected(&e.path, 0.2)),
            ] {
                let fine_branches: Vec<u64> = fine
                    .points
                    .iter()
                    .enumerate()
                    .filter(|(p, _)| p % 2 == 0 && *p > 0)
                    .map(|(_, q)| q.z.to_bits())
                    .collect();
                for (p, q) in coarse.points.iter().enumerate() {
                    if p % 2 == 0 && p > 0 {
                        assert!(
                            fine_branches.contains(&q.z.to_bits()),
                            "branch height {} missing after refinement",
                            q.z
                        );
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 10, "refinement check needs branch points");
    }

    #[test]
    fn corrected_walk_shifts_heights() {
        let mut rng = rng_for(23, tag::EXCURSION, 6);
        let e = sample_excursion_conditioned(0.5, 1e-3, 2_000_000, &mut rng);
        assert!(!e.truncated);
        let plain = h_erase(&e.path, 0.5);
        let corr = h_erase_corrected(&e.path, 0.5);
        assert_eq!(plain.m(), corr.m(), "compensation must not change episode count here");
        let d = extremum_gap(1e-3);
        for (p, (a, b)) in plain.points.iter().zip(&corr.points).enumerate() {
            if p == 0 {
                assert_eq!(b.z, 0.0);
            } else if p % 2 == 1 {
                assert!((b.z - a.z - d).abs() < 1e-12, "peaks shift up by delta");
            } else {
                assert!(b.z <= a.z && a.z - b.z <= d + 1e-12, "valleys shift down by at most delta");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

        #[test]
        fn walk_and_tree_invariants(seed in 0u64..600) {
            let mut rng = rng_for(seed, tag::EXCURSION, 7);
            let e = sample_excursion_conditioned(0.3, 1e-2, 40_000, &mut rng);
            prop_assume!(!e.truncated);
            let w = h_erase(&e.path, 0.3);
            let m = w.m();
            prop_assert!(m >= 1);
            prop_assert_eq!(m % 2, 1);
            prop_assert_eq!(w.points[0].z, 0.0);
            for p in 1..=m {
                let z = w.points[p].z;
                prop_assert!(z >= 0.0);
                if p % 2 == 1 {
                    prop_assert!(z > w.points[p - 1].z);
                    prop_assert!(z > w.z(p + 1));
                } else {
                    prop_assert!(z < w.points[p - 1].z);
                }
                prop_assert!(w.points[p].gamma > w.points[p - 1].gamma);
            }

            let t = build_tree(&w).unwrap();
            let mut roots = 0;
            for e in &t.edges {
                prop_assert!(e.z > e.y || (e.z == e.y && !e.is_leaf()));
                match e.parent {
                    None => {
                        roots += 1;
                        prop_assert_eq!(e.y, 0.0);
                    }
                    Some(pid) => {
                        // Children attach exactly at the parent's top.
                        prop_assert_eq!(e.y.to_bits(), t.edge(pid).z.to_bits());
                        prop_assert!(t.children_of(pid).contains(&e.id));
                    }
                }
            }
            prop_assert_eq!(roots, 1);
            // Binary branching: internal edges carry exactly two children.
            for e in &t.edges {
                if e.is_leaf() {
                    prop_assert!(t.children_of(e.id).is_empty());
                } else {
                    prop_assert_eq!(t.children_of(e.id).len(), 2);
                }
            }
        }
    }
}
