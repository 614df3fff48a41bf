//! Dormancy clocks and spatial displacement on the erased tree.
//!
//! Along every lineage, real time as a function of tree height is a unit
//! drift plus compound-Poisson jumps: sleep events arrive at rate c per
//! unit height and each inserts an Exp(ctilde) stretch of real time during
//! which the particle is dormant. First passage of a real-time level s
//! happens either on the drift (the particle is active at s, attained) or
//! strictly inside a jump (dormant). Passage exactly at a jump top counts
//! as attained: every later level is reached strictly later.
//!
//! Passage is resolved once per (tree, s) into a table: each edge either
//! hasn't reached s at its top (Below), contains the passage (Here), or
//! starts past it (Beyond, the ancestor owns the passage). Equality of s
//! with an edge's top value is deferred to its children, which see the
//! bit-copied value at their bottom; each child then reports the passage,
//! one per subtree, matching the contour sweep's episode count.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};

use crate::erasure::ErasedTree;
use crate::rng::SimRng;

/// Unit-drift subordinator with compound-Poisson jumps on [0, length].
#[derive(Debug, Clone)]
pub struct Subordinator {
    pub start: f64,
    pub length: f64,
    /// (location, inserted real time), sorted by location.
    pub jumps: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstPassage {
    /// Height where the level is first reached; None if not within range.
    pub height: Option<f64>,
    /// Reached on the drift or exactly at a jump top.
    pub attained: bool,
}

impl Subordinator {
    pub fn value_at(&self, y: f64) -> f64 {
        let mut v = self.start + y;
        for &(loc, size) in &self.jumps {
            if loc <= y {
                v += size;
            } else {
                break;
            }
        }
        v
    }

    pub fn first_passage(&self, s: f64) -> FirstPassage {
        if s <= self.start {
            return FirstPassage { height: Some(0.0), attained: s == self.start };
        }
        let mut v = self.start;
        let mut y = 0.0;
        for &(loc, size) in &self.jumps {
            if s <= v + (loc - y) {
                return FirstPassage { height: Some(y + (s - v)), attained: true };
            }
            let pre = v + (loc - y);
            if s <= pre + size {
                return FirstPassage { height: Some(loc), attained: s == pre + size };
            }
            v = pre + size;
            y = loc;
        }
        if s <= v + (self.length - y) {
            return FirstPassage { height: Some(y + (s - v)), attained: true };
        }
        FirstPassage { height: None, attained: false }
    }
}

fn sample_jumps(
    lo: f64,
    len: f64,
    c: f64,
    ctilde: f64,
    rng: &mut SimRng,
) -> Vec<(f64, f64)> {
    let rate = c * len;
    let n = if rate > 0.0 {
        Poisson::new(rate).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    let exp = Exp::new(ctilde).expect("positive wake rate");
    let mut jumps: Vec<(f64, f64)> = (0..n)
        .map(|_| (lo + rng.random::<f64>() * len, exp.sample(rng)))
        .collect();
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
    jumps
}

pub fn sample_subordinator(
    start: f64,
    length: f64,
    c: f64,
    ctilde: f64,
    rng: &mut SimRng,
) -> Subordinator {
    assert!(start >= 0.0 && length >= 0.0 && c >= 0.0);
    Subordinator { start, length, jumps: sample_jumps(0.0, length, c, ctilde, rng) }
}

#[derive(Debug, Clone, Default)]
pub struct EdgeMarks {
    /// (height in [y, z), inserted real time), sorted by height.
    pub jumps: Vec<(f64, f64)>,
    /// Real time at the edge's lower end, bit-copied from the parent top.
    pub v_base: f64,
    /// v_base + edge length + total inserted time.
    pub v_top: f64,
}

#[derive(Debug, Clone)]
pub struct TreeMarks {
    /// Real time at the tree base: the initial wake time (0 when active).
    pub s0: f64,
    pub c: f64,
    pub ctilde: f64,
    pub edges: Vec<EdgeMarks>,
}

/// Decorates every edge with sleep marks, in preorder so draws are a
/// deterministic function of the tree shape and the stream.
pub fn mark_tree(tree: &ErasedTree, s0: f64, c: f64, ctilde: f64, rng: &mut SimRng) -> TreeMarks {
    assert!(s0 >= 0.0 && c >= 0.0 && ctilde > 0.0);
    let mut edges = vec![EdgeMarks::default(); tree.len()];
    let mut stack = vec![tree.root];
    while let Some(id) = stack.pop() {
        let e = tree.edge(id);
        let v_base = match e.parent {
            None => s0,
            Some(p) => edges[p - 1].v_top,
        };
        let jumps = sample_jumps(e.y, e.len(), c, ctilde, rng);
        let inserted: f64 = jumps.iter().map(|j| j.1).sum();
        edges[id - 1] = EdgeMarks { jumps, v_base, v_top: v_base + e.len() + inserted };
        for &ch in tree.children_of(id).iter().rev() {
            stack.push(ch);
        }
    }
    TreeMarks { s0, c, ctilde, edges }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Passage {
    /// The lineage has not reached s by this edge's top (equality deferred
    /// to the children, or dropped at a leaf tip).
    Below,
    /// s is first reached within this edge.
    Here { height: f64, attained: bool },
    /// An ancestor already reached s.
    Beyond,
}

#[derive(Debug, Clone)]
pub struct PassageTable {
    pub s: f64,
    /// s precedes the initial wake time: one dormant atom sits at the base.
    pub base: bool,
    pub per_edge: Vec<Passage>,
    /// Passage height governing each edge's subtree; infinite where the
    /// lineage dies before reaching s.
    pub fp: Vec<f64>,
    /// Edge hosting that passage (root id for a base atom, usize::MAX none).
    pub host: Vec<usize>,
    pub attained: Vec<bool>,
}

fn classify(e_y: f64, e_z: f64, marks: &EdgeMarks, s: f64) -> Passage {
    if marks.v_base > s {
        return Passage::Beyond;
    }
    if marks.v_base == s {
        return Passage::Here { height: e_y, attained: true };
    }
    if s >= marks.v_top {
        return Passage::Below;
    }
    let mut v = marks.v_base;
    let mut y = e_y;
    for &(loc, size) in &marks.jumps {
        if s <= v + (loc - y) {
            return Passage::Here { height: y + (s - v), attained: true };
        }
        let pre = v + (loc - y);
        if s <= pre + size {
            return Passage::Here { height: loc, attained: s == pre + size };
        }
        v = pre + size;
        y = loc;
    }
    debug_assert!(s < v + (e_z - y));
    Passage::Here { height: y + (s - v), attained: true }
}

pub fn passage_table(tree: &ErasedTree, marks: &TreeMarks, s: f64) -> PassageTable {
    let n = tree.len();
    let mut per_edge = vec![Passage::Below; n];
    let mut fp = vec![f64::INFINITY; n];
    let mut host = vec![usize::MAX; n];
    let mut attained = vec![false; n];

    let mut stack = vec![tree.root];
    while let Some(id) = stack.pop() {
        let e = tree.edge(id);
        let p = classify(e.y, e.z, &marks.edges[id - 1], s);
        per_edge[id - 1] = p;
        match p {
            Passage::Here { height, attained: a } => {
                fp[id - 1] = height;
                host[id - 1] = id;
                attained[id - 1] = a;
            }
            Passage::Beyond => match e.parent {
                Some(par) => {
                    fp[id - 1] = fp[par - 1];
                    host[id - 1] = host[par - 1];
                    attained[id - 1] = attained[par - 1];
                }
                None => {
                    // s precedes the initial wake time; the base atom at
                    // height 0 governs every lineage.
                    fp[id - 1] = 0.0;
                    host[id - 1] = tree.root;
                    attained[id - 1] = false;
                }
            },
            Passage::Below => {}
        }
        for &ch in tree.children_of(id) {
            stack.push(ch);
        }
    }
    PassageTable { s, base: s < marks.s0, per_edge, fp, host, attained }
}

/// Lazy Brownian positions over the tree, one coordinate set per queried
/// (edge, height). Queries are deduplicated and sorted before any draw, so
/// the result is a function of the query set, not the call order; repeated
/// keys always return the cached point.
#[derive(Debug, Clone)]
pub struct SpatialCache {
    dim: usize,
    base: Vec<f64>,
    keys: Vec<Vec<(f64, Vec<f64>)>>,
}

impl SpatialCache {
    pub fn new(n_edges: usize, dim: usize, base: Vec<f64>) -> Self {
        assert_eq!(base.len(), dim);
        SpatialCache { dim, base, keys: vec![Vec::new(); n_edges] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn gauss(rng: &mut SimRng) -> f64 {
        rng.sample(StandardNormal)
    }

    fn anchor(&mut self, tree: &ErasedTree, id: usize, rng: &mut SimRng) {
        if !self.keys[id - 1].is_empty() {
            return;
        }
        let mut chain = vec![id];
        let mut cur = id;
        while let Some(p) = tree.edge(cur).parent {
            if !self.keys[p - 1].is_empty() {
                break;
            }
            chain.push(p);
            cur = p;
        }
        // Materialize top-down so each bottom copies its parent's top.
        for &e in chain.iter().rev() {
            let edge = tree.edge(e);
            let bottom = match edge.parent {
                None => self.base.clone(),
                Some(p) => {
                    let pk = &self.keys[p - 1];
                    let top = pk
                        .iter()
                        .find(|k| k.0 == tree.edge(p).z)
                        .expect("parent anchored before child");
                    top.1.clone()
                }
            };
            let sd = edge.len().max(0.0).sqrt();
            let top: Vec<f64> = bottom.iter().map(|&x| x + sd * Self::gauss(rng)).collect();
            self.keys[e - 1] = vec![(edge.y, bottom), (edge.z, top)];
        }
    }

    /// Positions for each query, aligned with the input order.
    pub fn positions(
        &mut self,
        tree: &ErasedTree,
        queries: &[(usize, f64)],
        rng: &mut SimRng,
    ) -> Vec<Vec<f64>> {
        let mut order: Vec<(usize, f64)> = queries.to_vec();
        order.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        order.dedup_by(|a, b| a.0 == b.0 && a.1.to_bits() == b.1.to_bits());

        for &(id, height) in &order {
            self.anchor(tree, id, rng);
            let ks = &mut self.keys[id - 1];
            let pos = ks.binary_search_by(|k| k.0.total_cmp(&height));
            if let Err(i) = pos {
                assert!(
                    i > 0 && i < ks.len(),
                    "height {height} outside edge {id} span"
                );
                let (h_lo, h_hi) = (ks[i - 1].0, ks[i].0);
                let a = height - h_lo;
                let b = h_hi - height;
                let var = if a + b > 0.0 { a * b / (a + b) } else { 0.0 };
                let sd = var.sqrt();
                let frac = if a + b > 0.0 { a / (a + b) } else { 0.0 };
                let point: Vec<f64> = (0..self.dim)
                    .map(|j| {
                        let lo = ks[i - 1].1[j];
                        let hi = ks[i].1[j];
                        lo + (hi - lo) * frac + sd * Self::gauss(rng)
                    })
                    .collect();
                ks.insert(i, (height, point));
            }
        }

        queries
            .iter()
            .map(|&(id, height)| {
                let ks = &self.keys[id - 1];
                let i = ks
                    .binary_search_by(|k| k.0.total_cmp(&height))
                    .expect("query materialized above");
                ks[i].1.clone()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erasure::{build_tree, h_erase};
    use crate::excursion::GridPath;
    use crate::rng::{rng_for, tag};

    fn unit_jump_sub() -> Subordinator {
        Subordinator { start: 0.0, length: 4.0, jumps: vec![(1.0, 2.0)] }
    }

    #[test]
    fn first_passage_hand_values() {
        let v = unit_jump_sub();
        assert_eq!(v.value_at(0.5), 0.5);
        assert_eq!(v.value_at(1.0), 3.0);
        assert_eq!(v.value_at(2.0), 4.0);
        assert_eq!(v.first_passage(0.5), FirstPassage { height: Some(0.5), attained: true });
        assert_eq!(v.first_passage(2.0), FirstPassage { height: Some(1.0), attained: false });
        assert_eq!(v.first_passage(3.0), FirstPassage { height: Some(1.0), attained: true });
        assert_eq!(v.first_passage(4.0), FirstPassage { height: Some(2.0), attained: true });
        assert_eq!(v.first_passage(7.0), FirstPassage { height: None, attained: false });
        assert_eq!(v.first_passage(0.0), FirstPassage { height: Some(0.0), attained: true });
        let d = Subordinator { start: 0.7, ..unit_jump_sub() };
        assert_eq!(d.first_passage(0.3), FirstPassage { height: Some(0.0), attained: false });
    }

    #[test]
    fn subordinator_mean_matches_drift_plus_jumps() {
        // E[V(L)] = start + L(1 + c/ctilde); here 10 * (1 + 0.5) = 15.
        let mut rng = rng_for(31, tag::MARKS, 0);
        let n = 2000;
        let mean: f64 = (0..n)
            .map(|_| sample_subordinator(0.0, 10.0, 2.0, 4.0, &mut rng).value_at(10.0))
            .sum::<f64>()
            / n as f64;
        // Var = c L E[J^2] = 2*10*2/16 = 2.5, so 3 SE is about 0.106.
        assert!((mean - 15.0).abs() < 0.12, "mean {mean}");
    }

    fn hand_tree() -> ErasedTree {
        let p = GridPath::new(0.25, 0.0, vec![0.0, 2.0, 0.5, 1.8, 0.0]);
        build_tree(&h_erase(&p, 1.0)).unwrap()
    }

    fn hand_marks(tree: &ErasedTree, s0: f64) -> TreeMarks {
        // Trunk [0, 0.5] with a 1.0 jump at height 0.3; leaf [0.5, 1.0]
        // clean; leaf [0.5, 0.8] with a 0.5 jump at height 0.6.
        let mut edges = vec![EdgeMarks::default(); tree.len()];
        edges[1] = EdgeMarks { jumps: vec![(0.3, 1.0)], v_base: s0, v_top: s0 + 1.5 };
        edges[0] = EdgeMarks { jumps: vec![], v_base: s0 + 1.5, v_top: s0 + 2.0 };
        edges[2] = EdgeMarks { jumps: vec![(0.6, 0.5)], v_base: s0 + 1.5, v_top: s0 + 2.3 };
        TreeMarks { s0, c: 1.0, ctilde: 2.0, edges }
    }

    fn atoms_of(t: &PassageTable, tree: &ErasedTree) -> Vec<(usize, f64, bool)> {
        let mut out = Vec::new();
        if t.base {
            out.push((tree.root, 0.0, false));
        }
        for (i, p) in t.per_edge.iter().enumerate() {
            if let Passage::Here { height, attained } = p {
                out.push((i + 1, *height, *attained));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        out
    }

    #[test]
    fn passage_table_hand_cases() {
        let tree = hand_tree();
        let marks = hand_marks(&tree, 0.0);
        let cases: Vec<(f64, Vec<(usize, f64, bool)>)> = vec![
            (0.2, vec![(2, 0.2, true)]),
            (0.5, vec![(2, 0.3, false)]),
            (1.3, vec![(2, 0.3, true)]),
            // Equality at the trunk top defers to both children.
            (1.5, vec![(1, 0.5, true), (3, 0.5, true)]),
            // Height written as the scan computes it: y + (s - v).
            (1.9, vec![(1, 0.5 + (1.9_f64 - 1.5), true), (3, 0.6, false)]),
            // The long leaf dies before 2.05; only the jump survives.
            (2.05, vec![(3, 0.6, false)]),
            (3.0, vec![]),
        ];
        for (s, want) in cases {
            let t = passage_table(&tree, &marks, s);
            assert_eq!(atoms_of(&t, &tree), want, "s = {s}");
        }
    }

    #[test]
    fn passage_table_dormant_base() {
        let tree = hand_tree();
        let marks = hand_marks(&tree, 0.7);
        let t = passage_table(&tree, &marks, 0.3);
        assert!(t.base);
        assert_eq!(atoms_of(&t, &tree), vec![(2, 0.0, false)]);
        assert_eq!(t.fp[0], 0.0);
        assert_eq!(t.host[0], 2);
        let t2 = passage_table(&tree, &marks, 0.7);
        assert!(!t2.base);
        assert_eq!(atoms_of(&t2, &tree), vec![(2, 0.0, true)]);
    }

    #[test]
    fn passage_heights_monotone_in_s() {
        let mut rng = rng_for(32, tag::MARKS, 1);
        for rep in 0..40 {
            let mut erng = rng_for(33, tag::EXCURSION, rep);
            let e = crate::excursion::sample_excursion_conditioned(0.4, 1e-2, 60_000, &mut erng);
            if e.truncated {
                continue;
            }
            let tree = build_tree(&h_erase(&e.path, 0.4)).unwrap();
            let marks = mark_tree(&tree, 0.0, 1.5, 2.0, &mut rng);
            let (s1, s2) = (0.4, 0.9);
            let t1 = passage_table(&tree, &marks, s1);
            let t2 = passage_table(&tree, &marks, s2);
            for e in &tree.edges {
                if e.is_leaf() {
                    let i = e.id - 1;
                    if t2.fp[i].is_finite() {
                        assert!(t1.fp[i].is_finite(), "earlier passage must exist");
                        assert!(t1.fp[i] <= t2.fp[i], "passage heights must be monotone");
                    }
                }
            }
        }
    }

    #[test]
    fn marks_chain_values_through_branch_points() {
        let mut rng = rng_for(34, tag::MARKS, 2);
        let tree = hand_tree();
        let marks = mark_tree(&tree, 0.25, 2.0, 3.0, &mut rng);
        for e in &tree.edges {
            let m = &marks.edges[e.id - 1];
            match e.parent {
                None => assert_eq!(m.v_base, 0.25),
                Some(p) => assert_eq!(m.v_base.to_bits(), marks.edges[p - 1].v_top.to_bits()),
            }
            let inserted: f64 = m.jumps.iter().map(|j| j.1).sum();
            assert!((m.v_top - m.v_base - e.len() - inserted).abs() < 1e-15);
            for j in &m.jumps {
                assert!(j.0 >= e.y && j.0 < e.z && j.1 > 0.0);
            }
        }
    }

    #[test]
    fn spatial_cache_is_order_independent_and_coherent() {
        let tree = hand_tree();
        let base = vec![1.0, -2.0];
        let queries = vec![(1usize, 0.75), (2usize, 0.25), (3usize, 0.6), (1usize, 0.75)];
        let mut c1 = SpatialCache::new(tree.len(), 2, base.clone());
        let mut r1 = rng_for(35, tag::SPATIAL, 0);
        let p1 = c1.positions(&tree, &queries, &mut r1);
        assert_eq!(p1[0], p1[3], "repeated key returns the cached point");

        let mut rev = queries.clone();
        rev.reverse();
        let mut c2 = SpatialCache::new(tree.len(), 2, base.clone());
        let mut r2 = rng_for(35, tag::SPATIAL, 0);
        let p2 = c2.positions(&tree, &rev, &mut r2);
        for (a, b) in p1.iter().zip(p2.iter().rev()) {
            assert_eq!(a, b, "query order must not matter");
        }

        // A child's bottom key equals its parent's top key bit for bit.
        let mut c3 = SpatialCache::new(tree.len(), 2, base);
        let mut r3 = rng_for(35, tag::SPATIAL, 0);
        let p3 = c3.positions(&tree, &[(2, 0.5), (1, 0.5)], &mut r3);
        assert_eq!(p3[0], p3[1]);
    }

    #[test]
    fn bridge_midpoint_has_correct_spread() {
        let tree = hand_tree();
        let mut sum = 0.0;
        let mut sq = 0.0;
        let n = 2000;
        for i in 0..n {
            let mut cache = SpatialCache::new(tree.len(), 1, vec![0.0]);
            let mut rng = rng_for(36, tag::SPATIAL, i);
            // Trunk spans [0, 0.5]; condition on its endpoints.
            let ends = cache.positions(&tree, &[(2, 0.0), (2, 0.5)], &mut rng);
            let mid = cache.positions(&tree, &[(2, 0.25)], &mut rng)[0][0];
            let centered = mid - 0.5 * (ends[0][0] + ends[1][0]);
            sum += centered;
            sq += centered * centered;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        // Bridge variance at the midpoint of a 0.5-long edge = 0.125.
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 0.125).abs() < 0.015, "var {var}");
    }
}
