//! Grid models of closed manifolds with exact distance and volume oracles.
//!
//! The only model is the flat torus (ℝ/2πℤ)ⁿ, n ∈ {1, 2}, sampled on an
//! m-point grid per axis. Grid point `i₀·m + i₁` has coordinates
//! `(i₀h, i₁h)`, so flat-index order is lexicographic coordinate order.
//! Every grid point stands for a cell of measure hⁿ and all integrals are
//! midpoint sums.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

/// Flat index of a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct GridPoint(pub usize);

impl GridPoint {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    FlatTorus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteManifold {
    model: Model,
    n: usize,
    m: usize,
    h: f64,
    weight: f64,
}

impl DiscreteManifold {
    pub fn flat_torus(n: usize, m: usize) -> Result<Self> {
        if !(1..=2).contains(&n) {
            return Err(Error::Manifold(format!("dimension {n} not supported (1 or 2)")));
        }
        if m < 4 {
            return Err(Error::Manifold(format!("grid resolution {m} below 4")));
        }
        let h = 2.0 * PI / m as f64;
        Ok(Self {
            model: Model::FlatTorus,
            n,
            m,
            h,
            weight: h.powi(n as i32),
        })
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Measure hⁿ carried by each grid point.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn total_measure(&self) -> f64 {
        self.len() as f64 * self.weight
    }

    pub fn injectivity_radius(&self) -> f64 {
        PI
    }

    pub fn diameter(&self) -> f64 {
        PI * (self.n as f64).sqrt()
    }

    pub fn points(&self) -> impl Iterator<Item = GridPoint> {
        (0..self.len()).map(GridPoint)
    }

    /// Per-axis integer indices (unused axes are 0).
    #[inline]
    pub fn axes(&self, x: GridPoint) -> [usize; 2] {
        if self.n == 1 {
            [x.0, 0]
        } else {
            [x.0 / self.m, x.0 % self.m]
        }
    }

    #[inline]
    pub fn from_axes(&self, a: [usize; 2]) -> GridPoint {
        if self.n == 1 {
            GridPoint(a[0] % self.m)
        } else {
            GridPoint((a[0] % self.m) * self.m + a[1] % self.m)
        }
    }

    /// Coordinates in [0, 2π)ⁿ (unused axes are 0).
    pub fn coords(&self, x: GridPoint) -> [f64; 2] {
        let a = self.axes(x);
        [a[0] as f64 * self.h, a[1] as f64 * self.h]
    }

    /// Grid point nearest to the given coordinates (wrapped).
    pub fn point_at(&self, coords: &[f64]) -> GridPoint {
        let mut a = [0usize; 2];
        for (axis, &c) in coords.iter().take(self.n).enumerate() {
            let k = (c / self.h).round() as i64;
            a[axis] = k.rem_euclid(self.m as i64) as usize;
        }
        self.from_axes(a)
    }

    /// Neighbour `step` grid points along `axis`, with periodic wrap.
    #[inline]
    pub fn shift(&self, x: GridPoint, axis: usize, step: isize) -> GridPoint {
        let mut a = self.axes(x);
        a[axis] = (a[axis] as isize + step).rem_euclid(self.m as isize) as usize;
        self.from_axes(a)
    }

    /// Minimal-image index offsets between two points, per axis.
    #[inline]
    fn offsets(&self, x: GridPoint, y: GridPoint) -> [usize; 2] {
        let a = self.axes(x);
        let b = self.axes(y);
        let mut out = [0; 2];
        for axis in 0..self.n {
            let d = a[axis].abs_diff(b[axis]);
            out[axis] = d.min(self.m - d);
        }
        out
    }

    /// Exact geodesic distance on the flat torus.
    #[inline]
    pub fn distance(&self, x: GridPoint, y: GridPoint) -> f64 {
        let o = self.offsets(x, y);
        let k2 = o[0] * o[0] + o[1] * o[1];
        self.h * (k2 as f64).sqrt()
    }

    /// Signed minimal-image displacement y − x along `axis`, in (−π, π].
    pub fn displacement(&self, x: GridPoint, y: GridPoint, axis: usize) -> f64 {
        let a = self.axes(x)[axis] as isize;
        let b = self.axes(y)[axis] as isize;
        let m = self.m as isize;
        let mut d = (b - a).rem_euclid(m);
        if d > m / 2 {
            d -= m;
        }
        d as f64 * self.h
    }

    /// d(x, set); `+∞` for an empty set.
    pub fn distance_to_set(&self, x: GridPoint, set: &[GridPoint]) -> f64 {
        set.iter()
            .map(|&y| self.distance(x, y))
            .fold(f64::INFINITY, f64::min)
    }

    /// d(·, set) at every grid point.
    pub fn distance_field(&self, set: &[GridPoint]) -> Vec<f64> {
        self.points().map(|x| self.distance_to_set(x, set)).collect()
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        if r < 0.0 || r.is_nan() {
            return Err(Error::NegativeRadius(r));
        }
        if r >= self.injectivity_radius() {
            return Err(Error::BeyondInjectivity {
                radius: r,
                injectivity: self.injectivity_radius(),
            });
        }
        Ok(())
    }

    /// Grid points of the open ball B(x, r), any radius.
    pub fn ball_points(&self, x: GridPoint, r: f64) -> Vec<GridPoint> {
        self.points().filter(|&y| self.distance(x, y) < r).collect()
    }

    /// Measure of B(x, r) for radii below the injectivity radius.
    pub fn ball_measure(&self, x: GridPoint, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        Ok(self.region_measure(x, r))
    }

    /// Measure of the grid ball for any radius; equals the total measure once
    /// `r` exceeds the diameter.
    pub fn region_measure(&self, x: GridPoint, r: f64) -> f64 {
        let count = self.points().filter(|&y| self.distance(x, y) < r).count();
        count as f64 * self.weight
    }

    pub fn region_indicator(&self, spec: &RegionSpec, x: GridPoint) -> bool {
        match spec {
            RegionSpec::Ball { center, radius } => self.distance(*center, x) < *radius,
            RegionSpec::Influence { cells, alpha } => cells
                .iter()
                .zip(alpha)
                .any(|(cell, &a)| a > 0.0 && self.distance_to_set(x, cell) < a),
        }
    }

    pub fn region_mask(&self, spec: &RegionSpec) -> GridMask {
        let mut mask = GridMask::empty(self.len());
        for x in self.points() {
            if self.region_indicator(spec, x) {
                mask.insert(x);
            }
        }
        mask
    }

    /// Sum of `f` times the point weight over a mask.
    pub fn integrate(&self, mask: &GridMask, f: &[f64]) -> f64 {
        mask.iter().map(|x| f[x.0]).sum::<f64>() * self.weight
    }
}

/// A region of the manifold.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionSpec {
    /// Open geodesic ball.
    Ball { center: GridPoint, radius: f64 },
    /// Domain of influence ⋃ₖ {x : d(x, Uₖ) < αₖ} over cells with αₖ > 0.
    Influence {
        cells: Vec<Vec<GridPoint>>,
        alpha: Vec<f64>,
    },
}

/// Fixed-size bitset over the grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridMask {
    len: usize,
    words: Vec<u64>,
}

impl GridMask {
    pub fn empty(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn full(len: usize) -> Self {
        let mut m = Self::empty(len);
        for i in 0..len {
            m.words[i / 64] |= 1 << (i % 64);
        }
        m
    }

    pub fn from_predicate(len: usize, mut pred: impl FnMut(usize) -> bool) -> Self {
        let mut m = Self::empty(len);
        for i in 0..len {
            if pred(i) {
                m.words[i / 64] |= 1 << (i % 64);
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[inline]
    pub fn insert(&mut self, x: GridPoint) {
        self.words[x.0 / 64] |= 1 << (x.0 % 64);
    }

    #[inline]
    pub fn contains(&self, x: GridPoint) -> bool {
        self.words[x.0 / 64] >> (x.0 % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn union_with(&mut self, other: &GridMask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn intersect_with(&mut self, other: &GridMask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= b;
        }
    }

    pub fn subtract(&mut self, other: &GridMask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    pub fn is_disjoint(&self, other: &GridMask) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    pub fn is_subset(&self, other: &GridMask) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Set points in increasing index order.
    pub fn iter(&self) -> impl Iterator<Item = GridPoint> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(GridPoint(wi * 64 + b))
            })
        })
    }

    pub fn first(&self) -> Option<GridPoint> {
        self.iter().next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn torus(m: usize) -> DiscreteManifold {
        DiscreteManifold::flat_torus(2, m).unwrap()
    }

    #[test]
    fn half_period_and_wrapped_distances() {
        let man = torus(64);
        let o = man.point_at(&[0.0, 0.0]);
        assert!((man.distance(o, man.point_at(&[PI, 0.0])) - PI).abs() < 1e-14);
        let y = man.point_at(&[1.5 * PI, 0.5 * PI]);
        assert!((man.distance(o, y) - PI / 2f64.sqrt()).abs() < 1e-12);
        let z = man.point_at(&[1.0, 1.0]);
        assert_eq!(man.distance(z, z), 0.0);
    }

    #[test]
    fn total_measure_is_exact() {
        for m in [16, 33, 64] {
            let man = torus(m);
            let full = (2.0 * PI).powi(2);
            assert!((man.total_measure() - full).abs() <= 4.0 * f64::EPSILON * full);
            let line = DiscreteManifold::flat_torus(1, m).unwrap();
            assert!((line.total_measure() - 2.0 * PI).abs() <= 4.0 * f64::EPSILON * 2.0 * PI);
        }
    }

    #[test]
    fn ball_measures() {
        let man = torus(64);
        let x = GridPoint(0);
        let disk = man.ball_measure(x, 0.5).unwrap();
        assert!((disk - PI * 0.25).abs() < 2.0 * man.spacing() * 2.0 * PI * 0.5);
        let single = man.ball_measure(x, man.spacing() / 2.0).unwrap();
        assert_eq!(single, man.weight());
        let unit = man.ball_measure(x, 1.0).unwrap();
        assert!((unit - PI).abs() < 2.0 * man.spacing());
        assert!(matches!(
            man.ball_measure(x, PI),
            Err(Error::BeyondInjectivity { .. })
        ));
        assert_eq!(man.region_measure(x, man.diameter() + 0.1), man.total_measure());
    }

    #[test]
    fn influence_regions() {
        let man = torus(64);
        let o = man.point_at(&[0.0, 0.0]);
        let eps = 0.3;
        let cell = man.ball_points(o, eps / 4.0);
        let spec = RegionSpec::Influence {
            cells: vec![cell.clone()],
            alpha: vec![1.0],
        };
        assert!(man.region_indicator(&spec, man.point_at(&[0.9, 0.0])));
        assert!(!man.region_indicator(&spec, man.point_at(&[1.5, 0.0])));

        let empty = RegionSpec::Influence {
            cells: vec![cell.clone()],
            alpha: vec![0.0],
        };
        assert!(man.region_mask(&empty).is_empty());

        let whole = RegionSpec::Influence {
            cells: vec![vec![o]],
            alpha: vec![man.diameter() + 1.0],
        };
        assert_eq!(man.region_mask(&whole).count(), man.len());
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let man = torus(48);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let [x, y, z] = [0; 3].map(|_| GridPoint(rng.random_range(0..man.len())));
            let lhs = man.distance(x, z);
            let rhs = man.distance(x, y) + man.distance(y, z);
            assert!(lhs <= rhs * (1.0 + 2.0 * f64::EPSILON), "{x:?} {y:?} {z:?}");
            assert_eq!(man.distance(x, y), man.distance(y, x));
            assert_eq!(man.distance(x, y) == 0.0, x == y);
        }
    }

    #[test]
    fn mask_iteration_order() {
        let mut m = GridMask::empty(200);
        for i in [130, 3, 64, 199] {
            m.insert(GridPoint(i));
        }
        let v: Vec<_> = m.iter().map(|g| g.0).collect();
        assert_eq!(v, vec![3, 64, 130, 199]);
        assert_eq!(m.first(), Some(GridPoint(3)));
        assert_eq!(GridMask::full(200).count(), 200);
    }

    proptest! {
        #[test]
        fn ball_measure_monotone(r1 in 0.0f64..3.1, r2 in 0.0f64..3.1, p in 0usize..1024) {
            let man = torus(32);
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let x = GridPoint(p);
            prop_assert!(man.ball_measure(x, lo).unwrap() <= man.ball_measure(x, hi).unwrap());
        }

        #[test]
        fn influence_monotone_in_alpha(
            a in prop::collection::vec(0.0f64..4.0, 2),
            bump in prop::collection::vec(0.0f64..1.0, 2),
        ) {
            let man = torus(24);
            let cells = vec![vec![GridPoint(0), GridPoint(1)], vec![GridPoint(300)]];
            let small = man.region_mask(&RegionSpec::Influence { cells: cells.clone(), alpha: a.clone() });
            let larger: Vec<f64> = a.iter().zip(&bump).map(|(x, b)| x + b).collect();
            let big = man.region_mask(&RegionSpec::Influence { cells, alpha: larger });
            prop_assert!(small.is_subset(&big));
        }
    }
}
