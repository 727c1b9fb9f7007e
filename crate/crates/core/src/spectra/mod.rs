//! Forward eigen-solver for −Δ + q on the grid torus, the interior spectral
//! data it produces, and the δ-perturbation model.

mod archive;
mod forward;
mod perturb;
mod potential;

pub use archive::{export_csv, read_archive, write_archive};
pub use forward::{assemble_operator, centered_gradient, solve_forward, ForwardSolution};
pub use perturb::{approximation_residual, c01_norm, perturb, ApproximationResidual};
pub use potential::{lipschitz_seminorm, Bump, CosineTerm, PotentialField, PotentialSpec};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{DiscreteManifold, GridPoint};

/// How a data set was perturbed away from the exact forward data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationRecord {
    pub delta: f64,
    pub seed: u64,
    pub model: String,
    /// Number of leading modes that were perturbed.
    pub perturbed_modes: usize,
}

/// Eigenvalues and eigenfunction restrictions (with gradients) on U.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    man: DiscreteManifold,
    u_points: Vec<GridPoint>,
    u_lookup: Vec<u32>,
    eigenvalues: Vec<f64>,
    values: Vec<Vec<f64>>,
    gradients: Vec<Vec<f64>>,
    normalization_residual: f64,
    perturbation: Option<PerturbationRecord>,
}

const ABSENT: u32 = u32::MAX;

impl SpectralData {
    pub(crate) fn new(
        man: &DiscreteManifold,
        u_points: Vec<GridPoint>,
        eigenvalues: Vec<f64>,
        values: Vec<Vec<f64>>,
        gradients: Vec<Vec<f64>>,
        normalization_residual: f64,
    ) -> Self {
        let mut u_lookup = vec![ABSENT; man.len()];
        for (i, x) in u_points.iter().enumerate() {
            u_lookup[x.0] = i as u32;
        }
        Self {
            man: man.clone(),
            u_points,
            u_lookup,
            eigenvalues,
            values,
            gradients,
            normalization_residual,
            perturbation: None,
        }
    }

    pub fn manifold(&self) -> &DiscreteManifold {
        &self.man
    }

    pub fn dim(&self) -> usize {
        self.man.dim()
    }

    pub fn u_points(&self) -> &[GridPoint] {
        &self.u_points
    }

    /// Position of `x` in the U list.
    #[inline]
    pub fn u_index(&self, x: GridPoint) -> Option<usize> {
        match self.u_lookup[x.0] {
            ABSENT => None,
            i => Some(i as usize),
        }
    }

    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// φ_j on U (0-based j).
    pub fn values(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    /// ∇φ_j on U, `n` entries per U point.
    pub fn gradients(&self, j: usize) -> &[f64] {
        &self.gradients[j]
    }

    pub fn normalization_residual(&self) -> f64 {
        self.normalization_residual
    }

    pub fn perturbation(&self) -> Option<&PerturbationRecord> {
        self.perturbation.as_ref()
    }

    /// δ of the perturbation record, 0 for exact data.
    pub fn delta(&self) -> f64 {
        self.perturbation.as_ref().map_or(0.0, |p| p.delta)
    }

    /// Keeps the first `j` modes.
    pub fn truncated(&self, j: usize) -> SpectralData {
        let j = j.min(self.mode_count());
        let mut out = self.clone();
        out.eigenvalues.truncate(j);
        out.values.truncate(j);
        out.gradients.truncate(j);
        out
    }
}

/// Certified lower bound min_U φ₁ᵃ − δ for φ₁ on U.
pub fn estimate_c1(data: &SpectralData) -> Result<f64> {
    if data.mode_count() == 0 {
        return Err(Error::Spectral("no modes".into()));
    }
    let min = data.values(0).iter().cloned().fold(f64::INFINITY, f64::min);
    let c1 = min - data.delta();
    if c1 > 0.0 {
        Ok(c1)
    } else {
        Err(Error::NonPositiveLowerBound(c1))
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn data(spec: PotentialSpec) -> SpectralData {
        let man = DiscreteManifold::flat_torus(2, 32).unwrap();
        let q = PotentialField::sample(&man, &spec, 2.0).unwrap();
        let sol = solve_forward(&man, &q, 6).unwrap();
        let p = man.point_at(&[PI, PI]);
        sol.restrict(&man.ball_points(p, 1.5))
    }

    #[test]
    fn c1_for_constant_potential() {
        let d = data(PotentialSpec::constant(1.0));
        assert!((estimate_c1(&d).unwrap() - 0.5 / PI).abs() < 1e-10);
    }

    #[test]
    fn c1_matches_forward_minimum() {
        let d = data(PotentialSpec::cos_x1(1.0, 0.3));
        let min = d.values(0).iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(estimate_c1(&d).unwrap(), min);
    }

    #[test]
    fn c1_rejects_large_delta() {
        let d = data(PotentialSpec::constant(1.0));
        let p = perturb(&d, 0.2, 1).unwrap();
        assert!(matches!(estimate_c1(&p), Err(Error::NonPositiveLowerBound(_))));
    }
}
