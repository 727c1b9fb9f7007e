//! Potential recovery: φ̂ and volᵃ on slices, the weighted graph Laplacian,
//! far-field q̂_i, the near-U field q̂(x) and the correspondence map Ψ.

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{DiscreteManifold, GridPoint};
use crate::metric::FiniteMetricSpace;
use crate::spectra::SpectralData;
use crate::unit_ball_volume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialParams {
    pub n: usize,
    pub eps: f64,
    pub r0: f64,
    /// ε^{1/16}.
    pub rho1: f64,
    /// ε^{1/(64n)}.
    pub rho2: f64,
    /// ε^{1/4}, near-U scale.
    pub rho: f64,
    pub lambda1: f64,
    pub c1: f64,
    /// Additive allowance for metric error in the distance gates.
    pub metric_pad: f64,
}

impl PotentialParams {
    pub fn new(n: usize, eps: f64, r0: f64, lambda1: f64, c1: f64, metric_pad: f64) -> Self {
        Self {
            n,
            eps,
            r0,
            rho1: eps.powf(1.0 / 16.0),
            rho2: eps.powf(1.0 / (64.0 * n as f64)),
            rho: eps.powf(0.25),
            lambda1,
            c1,
            metric_pad,
        }
    }

    /// 2(n+2)/ρ².
    fn scale(&self, rho: f64) -> f64 {
        2.0 * (self.n as f64 + 2.0) / (rho * rho)
    }

    /// d̂₀ᵢ ≥ r₀ + 3ρ₂ + pad.
    pub fn passes_choice_xi(&self, d0: f64) -> bool {
        d0 >= self.r0 + 3.0 * self.rho2 + self.metric_pad
    }
}

/// Per-class quantities on the outer entries of a metric space. `integrals`
/// holds ∫_{V_j}φ² for every class j.
pub struct SliceField<'a> {
    pub params: PotentialParams,
    pub space: &'a FiniteMetricSpace,
    pub integrals: &'a [f64],
    offset: usize,
    phi_hat: Vec<Option<f64>>,
}

impl<'a> SliceField<'a> {
    pub fn new(params: PotentialParams, space: &'a FiniteMetricSpace, integrals: &'a [f64]) -> Result<Self> {
        let offset = space.outer_offset();
        if integrals.len() != space.len() - offset {
            return Err(Error::Recovery(format!(
                "{} slice integrals for {} classes",
                integrals.len(),
                space.len() - offset
            )));
        }
        let mut f = Self {
            params,
            space,
            integrals,
            offset,
            phi_hat: Vec::new(),
        };
        f.phi_hat = (0..integrals.len()).map(|i| f.phi_hat_raw(i).ok()).collect();
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.integrals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.integrals.is_empty()
    }

    /// d̂ between classes i and j.
    #[inline]
    fn d(&self, i: usize, j: usize) -> f64 {
        self.space.get(self.offset + i, self.offset + j)
    }

    /// d̂₀ᵢ.
    pub fn base_distance(&self, i: usize) -> f64 {
        self.space.get(0, self.offset + i)
    }

    fn phi_hat_raw(&self, i: usize) -> Result<f64> {
        let p = &self.params;
        if self.base_distance(i) < p.r0 + p.rho1 + p.metric_pad {
            return Err(Error::Recovery(format!("class {i} is within r0 + rho1 of p")));
        }
        let sum: f64 = (0..self.len())
            .filter(|&j| self.d(i, j) < p.rho1)
            .map(|j| self.integrals[j])
            .sum();
        let radicand = sum / (unit_ball_volume(p.n) * p.rho1.powi(p.n as i32));
        if radicand < 0.0 {
            return Err(Error::Recovery(format!("negative radicand {radicand:e} at class {i}")));
        }
        Ok(radicand.sqrt())
    }

    /// φ̂(x_i) = ((1/(ν_nρ₁ⁿ)) Σ_{j: d̂_ij<ρ₁} ∫_{V_j}φ²)^{1/2}.
    pub fn phi_hat(&self, i: usize) -> Result<f64> {
        self.phi_hat[i].ok_or_else(|| Error::Recovery(format!("class {i} has no phi-hat")))
    }

    /// volᵃ(V_i) = φ̂(x_i)⁻² ∫_{V_i}φ².
    pub fn vol_a(&self, i: usize) -> Result<f64> {
        let ph = self.phi_hat(i)?;
        if self.integrals[i] == 0.0 {
            return Ok(0.0);
        }
        Ok(self.integrals[i] / (ph * ph))
    }

    fn ball(&self, i: usize, rho: f64) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.d(i, j) < rho).collect()
    }

    fn check_ball(&self, i: usize, rho: f64) -> Result<()> {
        let p = &self.params;
        if self.base_distance(i) < p.r0 + 2.0 * rho + p.rho1 + p.metric_pad {
            return Err(Error::Recovery(format!("class {i} too close to p for radius {rho}")));
        }
        Ok(())
    }

    /// volᵃ(B(x_i, ρ)) = Σ_{j: d̂_ij<ρ} volᵃ(V_j), guarded below by ν_nρⁿ/4.
    pub fn vol_a_ball(&self, i: usize, rho: f64) -> Result<f64> {
        self.check_ball(i, rho)?;
        let p = &self.params;
        let v = self
            .ball(i, rho)
            .into_iter()
            .map(|j| self.vol_a(j))
            .sum::<Result<f64>>()?;
        let floor = unit_ball_volume(p.n) * rho.powi(p.n as i32) / 4.0;
        if rho >= p.rho1 && v < floor {
            return Err(Error::Recovery(format!(
                "ball volume {v:.4} at class {i} below nu_n rho^n / 4 = {floor:.4}"
            )));
        }
        Ok(v)
    }

    /// (Δ_X f)(x_i) with f_j = φ̂(x_j) unless a node field is injected.
    pub fn graph_laplacian(&self, i: usize, rho: f64, field: Option<&[f64]>) -> Result<f64> {
        let ball = self.vol_a_ball(i, rho)?;
        let value = |j: usize| -> Result<f64> {
            match field {
                Some(f) => Ok(f[j]),
                None => self.phi_hat(j),
            }
        };
        let mut sum = 0.0;
        for j in self.ball(i, rho) {
            sum += match field {
                Some(f) => self.vol_a(j)? * f[j],
                None if self.integrals[j] == 0.0 => 0.0,
                None => self.integrals[j] / self.phi_hat(j)?,
            };
        }
        let s = self.params.scale(rho);
        Ok(s * sum / ball - s * value(i)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceRecord {
    pub class: usize,
    pub label: String,
    pub d0: f64,
    pub phi_hat: Option<f64>,
    pub vol_a: Option<f64>,
    pub laplacian: Option<f64>,
    pub q_hat: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NearRecord {
    pub point: GridPoint,
    pub q_hat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PotentialEstimate {
    pub params: PotentialParams,
    pub slices: Vec<SliceRecord>,
    pub near: Vec<NearRecord>,
}

impl PotentialEstimate {
    /// Classes carrying q̂.
    pub fn carried(&self) -> impl Iterator<Item = &SliceRecord> {
        self.slices.iter().filter(|r| r.q_hat.is_some())
    }

    /// One row per class; `oracle_q` supplies q(x_i) per class when known.
    pub fn write_csv(&self, path: &Path, oracle_q: Option<&[f64]>) -> Result<()> {
        let err = |e: csv::Error| Error::Recovery(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(["slice", "d0", "phi_hat", "vol_a", "laplacian", "q_hat", "oracle_q", "abs_error"])
            .map_err(err)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.10}"));
        for r in &self.slices {
            let q = oracle_q.map(|q| q[r.class]);
            let e = match (r.q_hat, q) {
                (Some(a), Some(b)) => Some((a - b).abs()),
                _ => None,
            };
            w.write_record([
                r.label.clone(),
                format!("{:.10}", r.d0),
                opt(r.phi_hat),
                opt(r.vol_a),
                opt(r.laplacian),
                opt(r.q_hat),
                opt(q),
                opt(e),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// q̂_i = λ₁ᵃ + (Δ_Xφ̂)(x_i)/φ̂(x_i) on every class passing the distance gate
/// and φ̂ ≥ c₁/2; the Laplacian uses ρ = ρ₂.
pub fn recover_q_far(field: &SliceField) -> Vec<SliceRecord> {
    let p = field.params;
    (0..field.len())
        .into_par_iter()
        .map(|i| {
            let d0 = field.base_distance(i);
            let phi_hat = field.phi_hat(i).ok();
            let vol_a = field.vol_a(i).ok();
            let mut rec = SliceRecord {
                class: i,
                label: field.space.labels[field.offset + i].clone(),
                d0,
                phi_hat,
                vol_a,
                laplacian: None,
                q_hat: None,
            };
            if !p.passes_choice_xi(d0) {
                return rec;
            }
            let Some(ph) = phi_hat else { return rec };
            if ph < p.c1 / 2.0 {
                warn!("class {i}: phi-hat {ph:.4} below c1/2; dropped");
                return rec;
            }
            match field.graph_laplacian(i, p.rho2, None) {
                Ok(lap) => {
                    rec.laplacian = Some(lap);
                    rec.q_hat = Some(p.lambda1 + lap / ph);
                }
                Err(e) => warn!("class {i}: {e}; dropped"),
            }
            rec
        })
        .collect()
}

/// q̂(x) = λ₁ᵃ + 𝓛ᵃ_ρ(x)/φ₁ᵃ(x) on grid points of B(p, 2r₀), with
/// 𝓛ᵃ_ρ(x) = (2(n+2)/(vol(B(x,ρ))ρ²)) ∫_{B(x,ρ)} (φ₁ᵃ(y) − φ₁ᵃ(x)) dy.
pub fn recover_q_near(data: &SpectralData, p: GridPoint, r0: f64, rho: f64) -> Result<Vec<NearRecord>> {
    let man = data.manifold();
    if rho >= man.injectivity_radius() / 2.0 {
        return Err(Error::BeyondInjectivity {
            radius: rho,
            injectivity: man.injectivity_radius(),
        });
    }
    let phi = data.values(0);
    let lambda1 = data.eigenvalues()[0];
    let n = man.dim();
    let s = 2.0 * (n as f64 + 2.0) / (rho * rho);
    let offsets = ball_offsets(man, rho);
    man.ball_points(p, 2.0 * r0)
        .into_par_iter()
        .map(|x| {
            let ix = data
                .u_index(x)
                .ok_or_else(|| Error::Recovery(format!("grid point {} outside U", x.0)))?;
            let fx = phi[ix];
            let mut sum = 0.0;
            for off in &offsets {
                let y = shift_by(man, x, off);
                let iy = data
                    .u_index(y)
                    .ok_or_else(|| Error::Recovery(format!("ball around {} leaves U", x.0)))?;
                sum += phi[iy] - fx;
            }
            let lap = s * sum / offsets.len() as f64;
            Ok(NearRecord {
                point: x,
                q_hat: lambda1 + lap / fx,
            })
        })
        .collect()
}

/// Grid offsets of the open ball of radius ρ around the origin.
fn ball_offsets(man: &DiscreteManifold, rho: f64) -> Vec<[isize; 2]> {
    let k = (rho / man.spacing()).ceil() as isize;
    let h = man.spacing();
    let second = if man.dim() == 2 { k } else { 0 };
    let mut out = Vec::new();
    for a in -k..=k {
        for b in -second..=second {
            if ((a * a + b * b) as f64).sqrt() * h < rho {
                out.push([a, b]);
            }
        }
    }
    out
}

fn shift_by(man: &DiscreteManifold, x: GridPoint, off: &[isize; 2]) -> GridPoint {
    let y = man.shift(x, 0, off[0]);
    if man.dim() == 2 {
        man.shift(y, 1, off[1])
    } else {
        y
    }
}

/// Labelled net points of one reconstruction with their q̂ values.
#[derive(Debug, Clone)]
pub struct NetPoints {
    pub labels: Vec<String>,
    pub points: Vec<GridPoint>,
    pub q_hat: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Correspondence {
    /// Net index (in the first reconstruction) owning each grid point.
    pub owner: Vec<usize>,
    /// Index in the second reconstruction for each net index of the first.
    pub partner: Vec<usize>,
    /// sup |d(Ψx, Ψx′) − d(x, x′)| over grid points.
    pub distortion: f64,
    /// sup |q̂₁ − q̂₂∘Ψ| over labels carrying q̂ in both.
    pub q_difference: Option<f64>,
}

/// Ψ: Voronoi cell of a net point of the first reconstruction ↦ the point
/// with the same label in the second.
pub fn build_psi(man: &DiscreteManifold, first: &NetPoints, second: &NetPoints) -> Result<Correspondence> {
    let index: std::collections::HashMap<&str, usize> = second
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let partner = first
        .labels
        .iter()
        .map(|l| {
            index
                .get(l.as_str())
                .copied()
                .ok_or_else(|| Error::LabelMismatch(format!("{l} missing in the second reconstruction")))
        })
        .collect::<Result<Vec<_>>>()?;
    if first.labels.len() != second.labels.len() {
        return Err(Error::LabelMismatch(format!(
            "{} vs {} entries",
            first.labels.len(),
            second.labels.len()
        )));
    }
    let owner: Vec<usize> = man
        .points()
        .map(|x| {
            (0..first.points.len())
                .min_by(|&a, &b| {
                    man.distance(x, first.points[a])
                        .total_cmp(&man.distance(x, first.points[b]))
                })
                .expect("nonempty net")
        })
        .collect();
    let image: Vec<GridPoint> = owner.iter().map(|&i| second.points[partner[i]]).collect();
    let distortion = (0..man.len())
        .into_par_iter()
        .map(|a| {
            (a + 1..man.len())
                .map(|b| {
                    (man.distance(image[a], image[b]) - man.distance(GridPoint(a), GridPoint(b))).abs()
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let q_difference = first
        .q_hat
        .iter()
        .zip(&partner)
        .filter_map(|(a, &j)| Some((a.as_ref()? - second.q_hat[j]?).abs()))
        .reduce(f64::max);
    Ok(Correspondence {
        owner,
        partner,
        distortion,
        q_difference,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::metric::{build_metric, MetricConfig};
    use crate::slicing::{build_catalog, build_partition, direct_slice_integral, CatalogSource, SliceVariant, SmallnessPolicy};
    use crate::spectra::{solve_forward, PotentialField, PotentialSpec};

    struct Fixture {
        space: FiniteMetricSpace,
        integrals: Vec<f64>,
        points: Vec<GridPoint>,
        man: DiscreteManifold,
        params: PotentialParams,
    }

    fn fixture(eps: f64, c: f64) -> Fixture {
        let man = DiscreteManifold::flat_torus(2, 48).unwrap();
        let p = man.point_at(&[PI, PI]);
        let part = build_partition(&man, p, 0.6, eps, 0.3, SmallnessPolicy::Relaxed).unwrap();
        let phi = Arc::new(vec![c; man.len()]);
        let cat = build_catalog(&part, c, &CatalogSource::Oracle { phi1: phi.clone() }).unwrap();
        let space = build_metric(&part, &cat, &MetricConfig::default()).unwrap();
        let sq: Vec<f64> = phi.iter().map(|v| v * v).collect();
        let integrals = cat
            .outer
            .iter()
            .map(|e| direct_slice_integral(&part, &sq, &e.tau, SliceVariant::Star))
            .collect();
        let l = part.anchor_count();
        let points = cat
            .outer
            .iter()
            .map(|e| {
                man.points()
                    .find(|&x| crate::slicing::slice_membership(&part, &e.beta.restricted(l, l), SliceVariant::Eps, x))
                    .unwrap()
            })
            .collect();
        let params = PotentialParams::new(2, eps, 0.6, 1.0, c, 0.0);
        Fixture {
            space,
            integrals,
            points,
            man,
            params,
        }
    }

    #[test]
    fn parameters_follow_eps() {
        let p = PotentialParams::new(2, 0.3, 0.6, 1.0, 0.1, 0.0);
        assert!((p.rho1 - 0.3f64.powf(1.0 / 16.0)).abs() < 1e-15);
        assert!((p.rho2 - 0.3f64.powf(1.0 / 128.0)).abs() < 1e-15);
        assert!((p.rho - 0.3f64.powf(0.25)).abs() < 1e-15);
        assert!(!p.passes_choice_xi(p.r0 + 3.0 * p.rho2 - 1e-9));
    }

    #[test]
    fn constant_fields_are_annihilated() {
        let fx = fixture(0.4, 1.0 / (2.0 * PI));
        let field = SliceField::new(fx.params, &fx.space, &fx.integrals).unwrap();
        let ones = vec![3.7; field.len()];
        let mut checked = 0;
        for i in 0..field.len() {
            if let Ok(v) = field.graph_laplacian(i, fx.params.rho2, Some(&ones)) {
                assert!(v.abs() < 1e-8, "{v}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn constant_phi_gives_exact_volumes() {
        let c = 1.0 / (2.0 * PI);
        let fx = fixture(0.4, c);
        let field = SliceField::new(fx.params, &fx.space, &fx.integrals).unwrap();
        for i in 0..field.len() {
            if let Ok(ph) = field.phi_hat(i) {
                let va = field.vol_a(i).unwrap();
                // volᵃ = ∫φ²/φ̂², so volᵃ·φ̂² reproduces the slice integral
                assert!((va * ph * ph - fx.integrals[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn phi_hat_requires_distance_from_p() {
        let fx = fixture(0.4, 0.2);
        let field = SliceField::new(fx.params, &fx.space, &fx.integrals).unwrap();
        let near = (0..field.len())
            .find(|&i| field.base_distance(i) < fx.params.r0 + fx.params.rho1)
            .unwrap();
        assert!(field.phi_hat(near).is_err());
        assert!(SliceField::new(fx.params, &fx.space, &fx.integrals[1..]).is_err());
    }

    #[test]
    fn far_recovery_respects_the_gate() {
        let fx = fixture(0.4, 1.0 / (2.0 * PI));
        let field = SliceField::new(fx.params, &fx.space, &fx.integrals).unwrap();
        for r in recover_q_far(&field) {
            if r.q_hat.is_some() {
                assert!(fx.params.passes_choice_xi(r.d0));
                assert!(r.phi_hat.unwrap() >= fx.params.c1 / 2.0);
            }
        }
    }

    #[test]
    fn near_recovery_for_constant_potential() {
        let man = DiscreteManifold::flat_torus(2, 48).unwrap();
        let q = PotentialField::sample(&man, &PotentialSpec::constant(1.0), 2.0).unwrap();
        let sol = solve_forward(&man, &q, 2).unwrap();
        let p = man.point_at(&[PI, PI]);
        let data = sol.restrict(&man.ball_points(p, 3.0));
        let near = recover_q_near(&data, p, 0.6, 0.3f64.powf(0.25)).unwrap();
        assert_eq!(near.len(), man.ball_points(p, 1.2).len());
        for r in near {
            assert!((r.q_hat - 1.0).abs() < 1e-9);
        }
        let small = sol.restrict(&man.ball_points(p, 1.5));
        assert!(recover_q_near(&small, p, 0.6, 0.5).is_err());
    }

    #[test]
    fn near_recovery_tracks_a_cosine_potential() {
        let man = DiscreteManifold::flat_torus(2, 48).unwrap();
        let spec = PotentialSpec::cos_x1(1.0, 0.3);
        let q = PotentialField::sample(&man, &spec, 2.0).unwrap();
        let sol = solve_forward(&man, &q, 2).unwrap();
        let p = man.point_at(&[PI, PI]);
        let data = sol.restrict(&man.ball_points(p, 3.0));
        let err = |eps: f64| {
            recover_q_near(&data, p, 0.6, eps.powf(0.25))
                .unwrap()
                .iter()
                .map(|r| (r.q_hat - q.values()[r.point.0]).abs())
                .fold(0.0, f64::max)
        };
        for eps in [0.4, 0.2, 0.05] {
            assert!(err(eps) < 0.05, "{eps}: {}", err(eps));
        }
    }

    #[test]
    fn self_correspondence_is_within_twice_the_covering_radius() {
        let fx = fixture(0.4, 0.2);
        let net = NetPoints {
            labels: fx.space.labels[fx.space.outer_offset()..].to_vec(),
            points: fx.points.clone(),
            q_hat: vec![None; fx.points.len()],
        };
        let psi = build_psi(&fx.man, &net, &net).unwrap();
        let cover = fx
            .man
            .points()
            .map(|x| fx.man.distance_to_set(x, &fx.points))
            .fold(0.0, f64::max);
        assert!(psi.distortion <= 2.0 * cover + 1e-12);
        let mut other = net.clone();
        other.labels[0] = "outer:missing".into();
        assert!(matches!(build_psi(&fx.man, &net, &other), Err(Error::LabelMismatch(_))));
    }
}
