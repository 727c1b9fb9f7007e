use std::ops::Range;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::potential::PotentialField;
use super::SpectralData;
use crate::error::{Error, Result};
use crate::geometry::{DiscreteManifold, GridPoint};
use crate::linalg::{self, SymMatrix};

/// Relative eigenvalue gap below which modes are treated as one cluster.
const CLUSTER_RTOL: f64 = 1e-11;
/// Relative tolerance for ties when picking pivots and signs.
const TIE_RTOL: f64 = 1e-8;
/// Extra modes solved past J so that clusters at the cut are complete.
const CLUSTER_PAD: usize = 16;
/// Accepted max |(A − λ)φ| relative to the largest diagonal entry.
const EIGEN_RTOL: f64 = 1e-9;

/// Full eigenpairs of −Δ_h + q on the whole grid, kept by the oracle.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    man: DiscreteManifold,
    q: Vec<f64>,
    eigenvalues: Vec<f64>,
    modes: Vec<Vec<f64>>,
    clusters: Vec<Range<usize>>,
}

/// Matrix of −Δ_h + diag(q) with the 2n+1-point periodic stencil.
pub fn assemble_operator(man: &DiscreteManifold, q: &[f64]) -> Result<SymMatrix> {
    let len = man.len();
    let inv_h2 = 1.0 / (man.spacing() * man.spacing());
    let mut a = vec![0.0; len * len];
    for x in man.points() {
        let col = x.0 * len;
        a[col + x.0] += 2.0 * man.dim() as f64 * inv_h2 + q[x.0];
        for axis in 0..man.dim() {
            for step in [-1, 1] {
                let y = man.shift(x, axis, step);
                a[col + y.0] -= inv_h2;
            }
        }
    }
    SymMatrix::from_col_major(len, a)
}

/// Lowest `j` eigenpairs of −Δ_h + q, L²-normalized on the grid, with a
/// deterministic basis inside each eigenvalue cluster and φ₁ > 0.
pub fn solve_forward(man: &DiscreteManifold, q: &PotentialField, j: usize) -> Result<ForwardSolution> {
    let len = man.len();
    if j == 0 || j > len {
        return Err(Error::Spectral(format!("J = {j} outside 1..={len}")));
    }
    let op = assemble_operator(man, q.values())?;
    let max_diag = (0..len).map(|i| op.get(i, i).abs()).fold(0.0, f64::max);
    let count = (j + CLUSTER_PAD).min(len);
    let mut dense = op.as_slice().to_vec();
    drop(op);
    let (w, z) = linalg::sym_eigen_lowest(&mut dense, len, count)?;
    drop(dense);

    let scale = man.weight().sqrt().recip();
    let mut modes: Vec<Vec<f64>> = z
        .chunks_exact(len)
        .map(|c| c.iter().map(|v| v * scale).collect())
        .collect();

    let tol = CLUSTER_RTOL * max_diag;
    let clusters = find_clusters(&w, tol);
    for c in &clusters {
        if c.len() > 1 {
            canonicalize_cluster(&mut modes[c.clone()]);
        }
        for mode in &mut modes[c.clone()] {
            fix_sign(mode);
        }
    }
    if let Some(last) = clusters.iter().find(|c| c.contains(&(j - 1))) {
        if last.end == count && count < len {
            warn!("eigenvalue cluster at the J cut may be incomplete");
        }
    }

    let mut eigenvalues = w;
    eigenvalues.truncate(j);
    modes.truncate(j);
    let residual = eigen_residual(man, q.values(), &eigenvalues, &modes);
    if residual > EIGEN_RTOL * max_diag {
        return Err(Error::Spectral(format!(
            "eigenvector residual {residual:e} too large; the BLAS backend may be faulty \
             (for OpenBLAS try OPENBLAS_CORETYPE=Haswell)"
        )));
    }
    let clusters = clusters
        .into_iter()
        .filter(|c| c.start < j)
        .map(|c| c.start..c.end.min(j))
        .collect();

    if let Some(neg) = modes[0].iter().position(|&v| v <= 0.0) {
        return Err(Error::Spectral(format!(
            "first eigenfunction not positive at grid point {neg}"
        )));
    }
    if eigenvalues.len() > 1 && (eigenvalues[1] - eigenvalues[0]) <= tol {
        return Err(Error::Spectral("first eigenvalue is not simple".into()));
    }
    debug!("forward solve: {} modes, lambda_J = {}", j, eigenvalues[j - 1]);
    Ok(ForwardSolution {
        man: man.clone(),
        q: q.values().to_vec(),
        eigenvalues,
        modes,
        clusters,
    })
}

/// max over modes and points of |((−Δ_h + q) − λ)φ|, in L²-normalized units.
fn eigen_residual(man: &DiscreteManifold, q: &[f64], w: &[f64], modes: &[Vec<f64>]) -> f64 {
    let inv_h2 = 1.0 / (man.spacing() * man.spacing());
    let mut worst: f64 = 0.0;
    for (phi, &lam) in modes.iter().zip(w) {
        for x in man.points() {
            let mut v = (2.0 * man.dim() as f64 * inv_h2 + q[x.0] - lam) * phi[x.0];
            for axis in 0..man.dim() {
                v -= inv_h2 * (phi[man.shift(x, axis, 1).0] + phi[man.shift(x, axis, -1).0]);
            }
            worst = worst.max(v.abs());
        }
    }
    worst
}

fn find_clusters(w: &[f64], tol: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=w.len() {
        if i == w.len() || w[i] - w[i - 1] > tol {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Pivoted Gram–Schmidt inside the span: repeatedly take the grid point whose
/// unit vector has the largest projection onto the remaining subspace.
fn canonicalize_cluster(modes: &mut [Vec<f64>]) {
    let s = modes.len();
    let len = modes[0].len();
    // remaining projector in cluster coordinates (row-major s×s)
    let mut rem = vec![0.0; s * s];
    for i in 0..s {
        rem[i * s + i] = 1.0;
    }
    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut row = vec![0.0; s];
    let mut proj = vec![0.0; s];
    for _ in 0..s {
        let mut norms = vec![0.0; len];
        for (x, nx) in norms.iter_mut().enumerate() {
            for (a, r) in row.iter_mut().enumerate() {
                *r = modes[a][x];
            }
            for a in 0..s {
                proj[a] = (0..s).map(|b| rem[a * s + b] * row[b]).sum();
            }
            *nx = linalg::norm(&proj);
        }
        let best = norms.iter().cloned().fold(0.0, f64::max);
        let pivot = norms
            .iter()
            .position(|&v| v >= best * (1.0 - TIE_RTOL))
            .expect("nonempty cluster");
        for (a, r) in row.iter_mut().enumerate() {
            *r = modes[a][pivot];
        }
        let mut c: Vec<f64> = (0..s)
            .map(|a| (0..s).map(|b| rem[a * s + b] * row[b]).sum())
            .collect();
        let nc = linalg::norm(&c);
        c.iter_mut().for_each(|v| *v /= nc);
        for a in 0..s {
            for b in 0..s {
                rem[a * s + b] -= c[a] * c[b];
            }
        }
        coeffs.push(c);
    }
    apply_cluster_rotation(modes, &coeffs);
}

/// Replaces the cluster basis by `Σ_a coeffs[t][a]·modes[a]` for each t.
fn apply_cluster_rotation(modes: &mut [Vec<f64>], coeffs: &[Vec<f64>]) {
    let len = modes[0].len();
    let mixed: Vec<Vec<f64>> = coeffs
        .iter()
        .map(|c| {
            let mut v = vec![0.0; len];
            for (a, &ca) in c.iter().enumerate() {
                for (o, &m) in v.iter_mut().zip(&modes[a]) {
                    *o += ca * m;
                }
            }
            v
        })
        .collect();
    for (m, v) in modes.iter_mut().zip(mixed) {
        *m = v;
    }
}

/// Largest-magnitude entry (first on ties) made positive.
fn fix_sign(mode: &mut [f64]) {
    let best = mode.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let i = mode
        .iter()
        .position(|v| v.abs() >= best * (1.0 - TIE_RTOL))
        .unwrap_or(0);
    if mode[i] < 0.0 {
        mode.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Centered-difference gradient with periodic wrap.
pub fn centered_gradient(man: &DiscreteManifold, f: &[f64], x: GridPoint) -> [f64; 2] {
    let mut g = [0.0; 2];
    let h2 = 2.0 * man.spacing();
    for (axis, ga) in g.iter_mut().enumerate().take(man.dim()) {
        let fwd = man.shift(x, axis, 1);
        let bwd = man.shift(x, axis, -1);
        *ga = (f[fwd.0] - f[bwd.0]) / h2;
    }
    g
}

impl ForwardSolution {
    pub fn manifold(&self) -> &DiscreteManifold {
        &self.man
    }

    pub fn potential(&self) -> &[f64] {
        &self.q
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode(&self, j: usize) -> &[f64] {
        &self.modes[j]
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Index ranges of eigenvalue clusters.
    pub fn clusters(&self) -> &[Range<usize>] {
        &self.clusters
    }

    /// Keeps the first `j` modes.
    pub fn truncated(&self, j: usize) -> ForwardSolution {
        let j = j.min(self.len());
        ForwardSolution {
            man: self.man.clone(),
            q: self.q.clone(),
            eigenvalues: self.eigenvalues[..j].to_vec(),
            modes: self.modes[..j].to_vec(),
            clusters: self
                .clusters
                .iter()
                .filter(|c| c.start < j)
                .map(|c| c.start..c.end.min(j))
                .collect(),
        }
    }

    /// Same eigenspaces with a seeded random orthogonal basis inside each
    /// cluster.
    pub fn with_random_cluster_rotation(&self, seed: u64) -> ForwardSolution {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for c in &self.clusters {
            let s = c.len();
            if s < 2 {
                continue;
            }
            let mut q: Vec<Vec<f64>> = Vec::with_capacity(s);
            while q.len() < s {
                let mut v: Vec<f64> = (0..s).map(|_| rng.sample(StandardNormal)).collect();
                for prev in &q {
                    let d = linalg::dot(&v, prev);
                    v.iter_mut().zip(prev).for_each(|(a, b)| *a -= d * b);
                }
                let nv = linalg::norm(&v);
                if nv > 1e-6 {
                    v.iter_mut().for_each(|a| *a /= nv);
                    q.push(v);
                }
            }
            apply_cluster_rotation(&mut out.modes[c.clone()], &q);
        }
        out
    }

    /// max_{j,k} |Σ φ_jφ_k hⁿ − δ_jk| over the first `upto` modes.
    pub fn orthonormality_residual(&self, upto: usize) -> f64 {
        let upto = upto.min(self.len());
        let w = self.man.weight();
        let mut worst: f64 = 0.0;
        for a in 0..upto {
            for b in a..upto {
                let g = linalg::dot(&self.modes[a], &self.modes[b]) * w;
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Per-mode |Σ(|∇_h φ|² + qφ²)hⁿ − λ| with forward differences.
    pub fn rayleigh_residuals(&self) -> Vec<f64> {
        let man = &self.man;
        let h = man.spacing();
        self.modes
            .iter()
            .zip(&self.eigenvalues)
            .map(|(phi, &lam)| {
                let mut e = 0.0;
                for x in man.points() {
                    for axis in 0..man.dim() {
                        let d = (phi[man.shift(x, axis, 1).0] - phi[x.0]) / h;
                        e += d * d;
                    }
                    e += self.q[x.0] * phi[x.0] * phi[x.0];
                }
                (e * man.weight() - lam).abs()
            })
            .collect()
    }

    /// Restriction of the first modes to `u` with centered gradients.
    pub fn restrict(&self, u: &[GridPoint]) -> SpectralData {
        let n = self.man.dim();
        let values = self
            .modes
            .iter()
            .map(|phi| u.iter().map(|x| phi[x.0]).collect())
            .collect();
        let gradients = self
            .modes
            .iter()
            .map(|phi| {
                let mut g = Vec::with_capacity(u.len() * n);
                for &x in u {
                    g.extend_from_slice(&centered_gradient(&self.man, phi, x)[..n]);
                }
                g
            })
            .collect();
        SpectralData::new(
            &self.man,
            u.to_vec(),
            self.eigenvalues.clone(),
            values,
            gradients,
            self.orthonormality_residual(self.len()),
        )
    }
}
