use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::forward::centered_gradient;
use super::{PerturbationRecord, SpectralData};
use crate::error::{Error, Result};
use crate::geometry::DiscreteManifold;

/// Target C^{0,1}(U) norm of each perturbation field ψ_j.
const PSI_NORM: f64 = 0.9;
/// Fraction of δ used for eigenvalue shifts.
const ETA_FRACTION: f64 = 0.9;
const BUMPS_PER_MODE: usize = 3;

/// Discrete C^{0,1}(U) norm: sup_U |f| plus the larger of the steepest
/// edge slope inside U and the largest stored gradient.
pub fn c01_norm(data: &SpectralData, f: &[f64], grad: &[f64]) -> f64 {
    let man = data.manifold();
    let n = man.dim();
    let h = man.spacing();
    let sup = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut slope: f64 = 0.0;
    for (i, &x) in data.u_points().iter().enumerate() {
        for axis in 0..n {
            if let Some(k) = data.u_index(man.shift(x, axis, 1)) {
                slope = slope.max((f[k] - f[i]).abs() / h);
            }
        }
        let g2: f64 = grad[i * n..(i + 1) * n].iter().map(|v| v * v).sum();
        slope = slope.max(g2.sqrt());
    }
    sup + slope
}

/// Smooth seeded field on the whole torus: a short sum of periodic
/// Gaussian bumps.
fn bump_field(man: &DiscreteManifold, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let tau = 2.0 * std::f64::consts::PI;
    let bumps: Vec<([f64; 2], f64, f64)> = (0..BUMPS_PER_MODE)
        .map(|_| {
            let c = [rng.random_range(0.0..tau), rng.random_range(0.0..tau)];
            let w = rng.random_range(0.6..1.4);
            let a = rng.random_range(-1.0..1.0);
            (c, w, a)
        })
        .collect();
    man.points()
        .map(|x| {
            let p = man.coords(x);
            bumps
                .iter()
                .map(|(c, w, a)| {
                    let d2: f64 = (0..man.dim())
                        .map(|k| {
                            let mut d = (p[k] - c[k]).rem_euclid(tau);
                            if d > tau / 2.0 {
                                d -= tau;
                            }
                            d * d
                        })
                        .sum();
                    a * (-d2 / (w * w)).exp()
                })
                .sum()
        })
        .collect()
}

/// δ-approximation of the data: modes j ≤ 1/δ get λ + η (|η| ≤ 0.9δ) and
/// φ + δψ with ‖ψ‖_{C^{0,1}(U)} = 0.9. Later modes are left exact.
pub fn perturb(data: &SpectralData, delta: f64, seed: u64) -> Result<SpectralData> {
    if !(delta >= 0.0) {
        return Err(Error::Spectral(format!("negative delta {delta}")));
    }
    if delta == 0.0 {
        return Ok(data.clone());
    }
    let man = data.manifold().clone();
    let n = man.dim();
    let count = ((1.0 / delta).floor() as usize).min(data.mode_count());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.clone();
    for j in 0..count {
        let eta = ETA_FRACTION * delta * rng.random_range(-1.0..=1.0);
        let psi_full = bump_field(&man, &mut rng);
        let psi: Vec<f64> = data.u_points().iter().map(|x| psi_full[x.0]).collect();
        let mut grad = Vec::with_capacity(psi.len() * n);
        for &x in data.u_points() {
            grad.extend_from_slice(&centered_gradient(&man, &psi_full, x)[..n]);
        }
        let norm = c01_norm(data, &psi, &grad);
        let scale = if norm > 0.0 { delta * PSI_NORM / norm } else { 0.0 };
        out.eigenvalues[j] += eta;
        for (v, p) in out.values[j].iter_mut().zip(&psi) {
            *v += scale * p;
        }
        for (g, p) in out.gradients[j].iter_mut().zip(&grad) {
            *g += scale * p;
        }
    }
    out.perturbation = Some(PerturbationRecord {
        delta,
        seed,
        model: "gaussian_bumps".into(),
        perturbed_modes: count,
    });
    Ok(out)
}

/// Largest per-mode deviations between exact and approximate data over the
/// modes j ≤ 1/δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApproximationResidual {
    pub modes_checked: usize,
    pub eigenvalue_gap: f64,
    pub c01_gap: f64,
}

impl ApproximationResidual {
    pub fn within(&self, delta: f64) -> bool {
        self.eigenvalue_gap < delta && self.c01_gap < delta
    }
}

pub fn approximation_residual(exact: &SpectralData, approx: &SpectralData, delta: f64) -> ApproximationResidual {
    let count = if delta > 0.0 {
        ((1.0 / delta).floor() as usize).min(exact.mode_count())
    } else {
        exact.mode_count()
    };
    let mut eigenvalue_gap: f64 = 0.0;
    let mut c01_gap: f64 = 0.0;
    for j in 0..count {
        eigenvalue_gap = eigenvalue_gap.max((approx.eigenvalues[j] - exact.eigenvalues[j]).abs());
        let dv: Vec<f64> = approx.values[j].iter().zip(&exact.values[j]).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = approx.gradients[j]
            .iter()
            .zip(&exact.gradients[j])
            .map(|(a, b)| a - b)
            .collect();
        c01_gap = c01_gap.max(c01_norm(exact, &dv, &dg));
    }
    ApproximationResidual {
        modes_checked: count,
        eigenvalue_gap,
        c01_gap,
    }
}
