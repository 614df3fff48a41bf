//! Clouds of marked snake excursions seeded by a pair of atomic measures
//! (dormant and active initial mass). Each cloud draws a Poisson number of
//! items with mean total_mass / eps; an item is one conditioned excursion
//! at level eps/2, erased, marked, and given an independent age offset when
//! it starts dormant.

use rand::Rng;
use rand_distr::{Exp, Poisson};

use crate::erasure::{build_tree, extremum_gap, h_erase_corrected, AlternatingWalk, ErasedTree, WalkBuilder};
use crate::error::{Error, Result};
use crate::excursion::{excursion_nodes, sample_excursion_conditioned, GridPath};
use crate::motion::{mark_tree, passage_table, TreeMarks};
use crate::particles::{oobbm_from_snake_tree, Atom};
use crate::rng::{child_seed, rng_for, tag, SimRng};

#[derive(Debug, Clone, Default)]
pub struct AtomicMeasure {
    /// (position, weight) pairs; weights must be positive.
    pub atoms: Vec<(Vec<f64>, f64)>,
}

impl AtomicMeasure {
    pub fn point(pos: Vec<f64>, weight: f64) -> Self {
        AtomicMeasure { atoms: vec![(pos, weight)] }
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum()
    }

    /// Weight-proportional draw of one atom position.
    pub fn sample_position(&self, rng: &mut SimRng) -> Vec<f64> {
        let total = self.total();
        assert!(total > 0.0, "cannot sample from a null measure");
        let mut u = rng.random::<f64>() * total;
        for (pos, w) in &self.atoms {
            u -= w;
            if u <= 0.0 {
                return pos.clone();
            }
        }
        self.atoms.last().unwrap().0.clone()
    }
}

#[derive(Debug, Clone)]
pub struct CloudParams {
    /// Mass per item; the erasure level is eps / 2.
    pub eps: f64,
    /// Sleep mark rate along lifetimes.
    pub c: f64,
    /// Wake rate: jump sizes and dormant age offsets are Exp(ctilde).
    pub ctilde: f64,
    /// Spatial dimension of base positions.
    pub dim: usize,
    pub dt: f64,
    /// Grid budget per item; items over budget are flagged, not resampled.
    pub max_points: usize,
    /// Keep the full grid path on each item (needed by contour sweeps);
    /// otherwise the excursion is erased as it streams.
    pub keep_path: bool,
}

impl CloudParams {
    pub fn h(&self) -> f64 {
        self.eps / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter(format!("c must be nonnegative, got {}", self.c)));
        }
        if !(self.ctilde > 0.0 && self.ctilde.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ctilde must be positive, got {}",
                self.ctilde
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be at least 1".into()));
        }
        if self.max_points < 2 {
            return Err(Error::InvalidParameter("max_points must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SnakeItem {
    pub base: Vec<f64>,
    /// Age offset: 0 for items born active, Exp(ctilde) for dormant ones.
    pub s0: f64,
    pub walk: AlternatingWalk,
    /// None when the excursion was truncated before producing a walk.
    pub tree: Option<ErasedTree>,
    pub marks: Option<TreeMarks>,
    /// Present only under keep_path.
    pub path: Option<GridPath>,
    pub sigma: f64,
    pub truncated: bool,
    pub points: usize,
}

/// One marked item. The excursion and mark randomness are tied to
/// (seed, idx) streams, so an item is reproducible in isolation.
pub fn sample_item(params: &CloudParams, base: Vec<f64>, s0: f64, seed: u64, idx: u64) -> SnakeItem {
    let h = params.h();
    let mut exc_rng = rng_for(seed, tag::EXCURSION, idx);
    let (walk, path, sigma, truncated, points) = if params.keep_path {
        let e = sample_excursion_conditioned(h, params.dt, params.max_points, &mut exc_rng);
        let walk = h_erase_corrected(&e.path, h);
        let n = e.path.len();
        (walk, Some(e.path), e.sigma, e.truncated, n)
    } else {
        let mut it = excursion_nodes(h, params.dt, params.max_points, &mut exc_rng);
        let mut b = WalkBuilder::new(h, extremum_gap(params.dt));
        for (t, v) in it.by_ref() {
            b.push(t, v);
        }
        (b.finish(), None, it.sigma(), it.truncated(), it.emitted())
    };
    let tree = build_tree(&walk).ok();
    let marks = tree.as_ref().map(|t| {
        let mut mark_rng = rng_for(seed, tag::MARKS, idx);
        mark_tree(t, s0, params.c, params.ctilde, &mut mark_rng)
    });
    SnakeItem { base, s0, walk, tree, marks, path, sigma, truncated, points }
}

/// Atoms of one item at age s. An item without a tree (possible only after
/// truncation) still holds its base mass while dormant, so it contributes a
/// dormant atom at the origin of its lifetime until s0.
pub fn item_atoms(item: &SnakeItem, s: f64) -> Vec<Atom> {
    match (&item.tree, &item.marks) {
        (Some(tree), Some(marks)) => {
            let table = passage_table(tree, marks, s);
            oobbm_from_snake_tree(tree, &table)
        }
        _ => {
            if s < item.s0 {
                vec![Atom { edge: 0, height: 0.0, active: false }]
            } else {
                Vec::new()
            }
        }
    }
}

/// (active, dormant) counts.
pub fn count_atoms(atoms: &[Atom]) -> (u64, u64) {
    let active = atoms.iter().filter(|a| a.active).count() as u64;
    (active, atoms.len() as u64 - active)
}

#[derive(Debug, Clone)]
pub struct Cloud {
    pub items: Vec<SnakeItem>,
    /// Item count drawn for this cloud (equals items.len()).
    pub planned: usize,
    pub truncated_items: usize,
}

/// Item count the cloud at (seed, cloud_idx) will draw, consuming the same
/// leading draw as `sample_cloud` but none of the item work.
pub fn sample_cloud_count(
    params: &CloudParams,
    dormant: &AtomicMeasure,
    active: &AtomicMeasure,
    seed: u64,
    cloud_idx: u64,
) -> Result<usize> {
    params.validate()?;
    let total = dormant.total() + active.total();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("initial measures carry no mass".into()));
    }
    let mut cloud_rng = rng_for(seed, tag::CLOUD, cloud_idx);
    let lambda = total / params.eps;
    let pois = Poisson::new(lambda)
        .map_err(|e| Error::InvalidParameter(format!("item intensity {lambda}: {e}")))?;
    Ok(cloud_rng.sample::<f64, _>(pois) as usize)
}

/// Poisson(total/eps) items; each is dormant with probability proportional
/// to the dormant mass, with base position drawn from the matching measure.
pub fn sample_cloud(
    params: &CloudParams,
    dormant: &AtomicMeasure,
    active: &AtomicMeasure,
    seed: u64,
    cloud_idx: u64,
) -> Result<Cloud> {
    params.validate()?;
    let md = dormant.total();
    let ma = active.total();
    let total = md + ma;
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("initial measures carry no mass".into()));
    }
    let mut cloud_rng = rng_for(seed, tag::CLOUD, cloud_idx);
    let lambda = total / params.eps;
    let pois = Poisson::new(lambda)
        .map_err(|e| Error::InvalidParameter(format!("item intensity {lambda}: {e}")))?;
    let n = cloud_rng.sample::<f64, _>(pois) as usize;

    let item_master = child_seed(seed, tag::CLOUD, cloud_idx);
    let mut items = Vec::with_capacity(n);
    let mut truncated_items = 0;
    for i in 0..n {
        let is_dormant = cloud_rng.random::<f64>() * total < md;
        let (base, s0) = if is_dormant {
            let age = cloud_rng.sample(Exp::new(params.ctilde).unwrap());
            (dormant.sample_position(&mut cloud_rng), age)
        } else {
            (active.sample_position(&mut cloud_rng), 0.0)
        };
        let item = sample_item(params, base, s0, item_master, i as u64);
        truncated_items += item.truncated as usize;
        items.push(item);
    }
    Ok(Cloud { items, planned: n, truncated_items })
}

/// Cloud-level (active, dormant) atom counts at age s.
pub fn cloud_counts(cloud: &Cloud, s: f64) -> (u64, u64) {
    let mut active = 0;
    let mut dormant = 0;
    for item in &cloud.items {
        let (a, d) = count_atoms(&item_atoms(item, s));
        active += a;
        dormant += d;
    }
    (active, dormant)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemigroupMatrix {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl SemigroupMatrix {
    pub fn compose(&self, other: &SemigroupMatrix) -> SemigroupMatrix {
        SemigroupMatrix {
            p00: self.p00 * other.p00 + self.p01 * other.p10,
            p01: self.p00 * other.p01 + self.p01 * other.p11,
            p10: self.p10 * other.p00 + self.p11 * other.p10,
            p11: self.p10 * other.p01 + self.p11 * other.p11,
        }
    }

    pub fn row_sums(&self) -> (f64, f64) {
        (self.p00 + self.p01, self.p10 + self.p11)
    }
}

/// Transition matrix of the two-state (0 = dormant, 1 = active) switch with
/// wake rate ctilde and sleep rate c.
pub fn semigroup(c: f64, ctilde: f64, t: f64) -> SemigroupMatrix {
    assert!(c >= 0.0 && ctilde >= 0.0 && c + ctilde > 0.0, "switch rates must not both vanish");
    assert!(t >= 0.0, "time must be nonnegative");
    let s = c + ctilde;
    let e = (-t * s).exp();
    SemigroupMatrix {
        p00: (c + ctilde * e) / s,
        p01: ctilde * (1.0 - e) / s,
        p10: c * (1.0 - e) / s,
        p11: (c * e + ctilde) / s,
    }
}

/// Mean (dormant, active) masses at age s from initial masses (md, ma).
pub fn expected_masses(md: f64, ma: f64, c: f64, ctilde: f64, s: f64) -> (f64, f64) {
    let m = semigroup(c, ctilde, s);
    (md * m.p00 + ma * m.p10, md * m.p01 + ma * m.p11)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_params(keep_path: bool) -> CloudParams {
        CloudParams {
            eps: 0.4,
            c: 1.0,
            ctilde: 2.0,
            dim: 2,
            dt: 1e-4,
            max_points: 400_000,
            keep_path,
        }
    }

    #[test]
    fn semigroup_rows_sum_to_one_and_compose() {
        let (c, ct) = (0.7, 1.9);
        for (s, t) in [(0.1, 0.4), (0.9, 0.9), (2.3, 0.05)] {
            let a = semigroup(c, ct, s);
            let b = semigroup(c, ct, t);
            let (r0, r1) = a.row_sums();
            assert!((r0 - 1.0).abs() < 1e-15 && (r1 - 1.0).abs() < 1e-15);
            let ab = a.compose(&b);
            let direct = semigroup(c, ct, s + t);
            for (x, y) in [
                (ab.p00, direct.p00),
                (ab.p01, direct.p01),
                (ab.p10, direct.p10),
                (ab.p11, direct.p11),
            ] {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn mass_pair_three_six_is_stationary() {
        for s in [0.01, 0.3, 1.0, 7.5] {
            let (d, a) = expected_masses(3.0, 6.0, 1.0, 2.0, s);
            assert!((d - 3.0).abs() < 1e-12, "dormant {d} at {s}");
            assert!((a - 6.0).abs() < 1e-12, "active {a} at {s}");
        }
    }

    #[test]
    fn all_dormant_unit_mass_at_half_decay() {
        // c = 1, ctilde = 2: at s = ln(2)/3 the switch kernel has decayed
        // to 1/2, leaving (2/3, 1/3) from a unit dormant start.
        let s = std::f64::consts::LN_2 / 3.0;
        let (d, a) = expected_masses(1.0, 0.0, 1.0, 2.0, s);
        assert!((d - 2.0 / 3.0).abs() < 1e-12, "dormant {d}");
        assert!((a - 1.0 / 3.0).abs() < 1e-12, "active {a}");
    }

    #[test]
    fn streamed_item_matches_kept_path_item() {
        let kept = test_params(true);
        let streamed = test_params(false);
        for idx in 0..12u64 {
            let a = sample_item(&kept, vec![0.0, 0.0], 0.3, 21, idx);
            let b = sample_item(&streamed, vec![0.0, 0.0], 0.3, 21, idx);
            assert_eq!(a.walk.m(), b.walk.m(), "item {idx}");
            for p in 0..=a.walk.m() {
                assert_eq!(a.walk.z(p), b.walk.z(p), "z at {p}");
                assert_eq!(a.walk.gamma(p), b.walk.gamma(p), "gamma at {p}");
            }
            assert_eq!(a.sigma, b.sigma);
            assert_eq!(a.points, b.points);
            assert_eq!(a.truncated, b.truncated);
            assert!(a.path.is_some() && b.path.is_none());
        }
    }

    #[test]
    fn cloud_is_deterministic_and_splits_types() {
        let params = test_params(false);
        let dormant = AtomicMeasure::point(vec![1.0, -1.0], 2.0);
        let active = AtomicMeasure::point(vec![0.5, 0.5], 6.0);
        let c1 = sample_cloud(&params, &dormant, &active, 77, 3).unwrap();
        let c2 = sample_cloud(&params, &dormant, &active, 77, 3).unwrap();
        assert_eq!(c1.planned, c2.planned);
        for (x, y) in c1.items.iter().zip(&c2.items) {
            assert_eq!(x.s0, y.s0);
            assert_eq!(x.base, y.base);
            assert_eq!(x.walk.m(), y.walk.m());
        }

        let mut dormant_n = 0usize;
        let mut total_n = 0usize;
        for k in 0..40u64 {
            let c = sample_cloud(&params, &dormant, &active, 77, k).unwrap();
            for item in &c.items {
                total_n += 1;
                if item.s0 > 0.0 {
                    dormant_n += 1;
                    assert_eq!(item.base, vec![1.0, -1.0]);
                } else {
                    assert_eq!(item.base, vec![0.5, 0.5]);
                }
            }
        }
        let frac = dormant_n as f64 / total_n as f64;
        // 2 of 8 mass units are dormant; 40 clouds of mean 20 items.
        assert!((frac - 0.25).abs() < 0.05, "dormant fraction {frac}");
    }

    #[test]
    fn treeless_item_holds_dormant_base_mass_until_wake() {
        let mut params = test_params(false);
        params.max_points = 16; // force truncation before the level is hit
        let item = sample_item(&params, vec![0.0, 0.0], 0.9, 5, 0);
        assert!(item.truncated && item.tree.is_none());
        let early = item_atoms(&item, 0.5);
        assert_eq!(early.len(), 1);
        assert!(!early[0].active);
        assert_eq!(early[0].height, 0.0);
        assert!(item_atoms(&item, 1.2).is_empty());
    }

    #[test]
    fn count_stream_matches_sampled_cloud() {
        let params = test_params(false);
        let dormant = AtomicMeasure::point(vec![0.0, 0.0], 1.5);
        let active = AtomicMeasure::point(vec![0.0, 0.0], 2.5);
        for k in 0..6u64 {
            let n = sample_cloud_count(&params, &dormant, &active, 9, k).unwrap();
            let cloud = sample_cloud(&params, &dormant, &active, 9, k).unwrap();
            assert_eq!(n, cloud.planned);
            assert_eq!(n, cloud.items.len());
        }
    }

    #[test]
    fn cloud_counts_sum_item_counts() {
        let params = test_params(false);
        let dormant = AtomicMeasure::point(vec![0.0, 0.0], 1.0);
        let active = AtomicMeasure::point(vec![0.0, 0.0], 1.0);
        let cloud = sample_cloud(&params, &dormant, &active, 11, 0).unwrap();
        let s = 0.2;
        let (a, d) = cloud_counts(&cloud, s);
        let mut a2 = 0;
        let mut d2 = 0;
        for item in &cloud.items {
            let (ia, id) = count_atoms(&item_atoms(item, s));
            a2 += ia;
            d2 += id;
        }
        assert_eq!((a, d), (a2, d2));
        assert!(a + d > 0);
    }
}
