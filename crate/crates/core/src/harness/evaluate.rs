use rayon::prelude::*;
use serde::Serialize;

use super::pipeline::{ForwardArtifacts, Reconstruction};
use crate::control::{AlphaKey, InfluenceFunctional, LaMode};
use crate::error::{Error, Result};
use crate::geometry::GridPoint;
use crate::potential::NetPoints;
use crate::slicing::{slice_membership, SliceVariant};

/// d̂ against true distances between corresponding points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricErrors {
    pub max: f64,
    pub mean: f64,
    pub worst: (usize, usize),
}

/// Near-field q̂(x) on B(p,2r₀)∖B(p,3r₀/2) against the q̂_i of the nearest
/// carrying slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapCheck {
    pub points: usize,
    pub max_gap: f64,
    pub allowance: f64,
    pub holds: bool,
}

/// One blind 𝓛ᵃ(M_α) evaluation next to its oracle value. `sigma` is the
/// achieved ‖uᵃ − χ_{M_α}φ₁‖_{L²(M)}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaRecord {
    pub key: String,
    pub blind: f64,
    pub oracle: f64,
    pub sigma: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    /// Corresponding point per metric entry; None for an empty ε-slice.
    pub points: Vec<Option<GridPoint>>,
    pub empty_slices: Vec<usize>,
    pub metric: MetricErrors,
    /// q(x_i) per class.
    pub oracle_q: Vec<f64>,
    pub q_far_max: Option<f64>,
    pub q_near_max: Option<f64>,
    /// Covering radius of {x_i} over M∖B(p,3r₀/2).
    pub covering_radius: f64,
    /// max_i max_{y∈V_i∖B(p,r₀)} d(x_i, y), i.e. C₃ε.
    pub proximity: f64,
    pub overlap: OverlapCheck,
    pub sigma: Vec<SigmaRecord>,
}

impl Evaluation {
    pub fn c3(&self, eps: f64) -> f64 {
        self.proximity / eps
    }

    pub fn sigma_max(&self) -> Option<f64> {
        self.sigma.iter().map(|r| r.sigma).reduce(f64::max)
    }

    /// The corresponding points as a labelled net carrying q̂.
    pub fn net(&self, r: &Reconstruction) -> NetPoints {
        let offset = r.space.outer_offset();
        let keep: Vec<usize> = (0..self.points.len()).filter(|&i| self.points[i].is_some()).collect();
        NetPoints {
            labels: keep.iter().map(|&i| r.space.labels[i].clone()).collect(),
            points: keep.iter().map(|&i| self.points[i].expect("kept")).collect(),
            q_hat: keep
                .iter()
                .map(|&i| i.checked_sub(offset).and_then(|c| r.estimate.slices[c].q_hat))
                .collect(),
        }
    }

    /// |d̂_ik − d(x_i, x_k)| for i < k with both points defined.
    pub fn metric_pairs(&self, r: &Reconstruction) -> Vec<(usize, usize, f64, f64)> {
        let man = &r.forward.manifold;
        let mut out = Vec::new();
        for i in 0..self.points.len() {
            let Some(a) = self.points[i] else { continue };
            for k in i + 1..self.points.len() {
                if let Some(b) = self.points[k] {
                    out.push((i, k, r.space.get(i, k), man.distance(a, b)));
                }
            }
        }
        out
    }
}

/// Inner entries map to themselves; an outer entry maps to the first grid
/// point of M^ε_{β⟨l⟩}, l the first criterion cell.
pub fn corresponding_points(r: &Reconstruction) -> Vec<Option<GridPoint>> {
    let part = &r.partition;
    let l = part.anchor_count();
    let man = &r.forward.manifold;
    let inner = r.catalog.inner.iter().map(|e| Some(e.point));
    let outer: Vec<Option<GridPoint>> = r
        .catalog
        .outer
        .par_iter()
        .map(|e| {
            let b = e.beta.restricted(l, l);
            man.points().find(|&x| slice_membership(part, &b, SliceVariant::Eps, x))
        })
        .collect();
    inner.chain(outer).collect()
}

fn metric_errors(r: &Reconstruction, points: &[Option<GridPoint>]) -> MetricErrors {
    let man = &r.forward.manifold;
    let n = points.len();
    let rows: Vec<(f64, usize, f64, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut worst = (0.0, i);
            let (mut sum, mut count) = (0.0, 0);
            if let Some(a) = points[i] {
                for (k, b) in points.iter().enumerate() {
                    if let Some(b) = *b {
                        let e = (r.space.get(i, k) - man.distance(a, b)).abs();
                        sum += e;
                        count += 1;
                        if e > worst.0 {
                            worst = (e, k);
                        }
                    }
                }
            }
            (worst.0, worst.1, sum, count)
        })
        .collect();
    let mut out = MetricErrors {
        max: 0.0,
        mean: 0.0,
        worst: (0, 0),
    };
    let (mut sum, mut count) = (0.0, 0);
    for (i, &(w, k, s, c)) in rows.iter().enumerate() {
        if w > out.max {
            out.max = w;
            out.worst = (i.min(k), i.max(k));
        }
        sum += s;
        count += c;
    }
    out.mean = if count > 0 { sum / count as f64 } else { 0.0 };
    out
}

/// Achieved σ for every memoized blind record: uᵃ = Σ b_jφ_j on the full
/// grid against χ_{M_α}φ₁ from the forward solution.
pub fn sigma_table(func: &InfluenceFunctional, forward: &ForwardArtifacts) -> Result<Vec<SigmaRecord>> {
    if func.mode() != LaMode::Blind {
        return Ok(Vec::new());
    }
    let sol = &forward.solution;
    let man = &forward.manifold;
    let geo = func.geometry();
    let phi = sol.mode(0);
    func.records()
        .into_par_iter()
        .map(|(key, rec): (AlphaKey, _)| {
            let b = rec
                .coefficients
                .as_ref()
                .ok_or_else(|| Error::Recovery("blind record without coefficients".into()))?;
            let mut err = 0.0;
            let mut oracle = 0.0;
            for x in man.points() {
                let ua: f64 = b.iter().enumerate().map(|(j, bj)| bj * sol.mode(j)[x.0]).sum();
                let target = if geo.contains(&key, x) { phi[x.0] } else { 0.0 };
                err += (ua - target).powi(2);
                oracle += target * target;
            }
            let w = man.weight();
            let label = key
                .entries()
                .map(|(k, a)| format!("{k}:{a:.6}"))
                .collect::<Vec<_>>()
                .join(" ");
            Ok(SigmaRecord {
                key: label,
                blind: rec.value,
                oracle: oracle * w,
                sigma: (err * w).sqrt(),
                residual: rec.residual,
            })
        })
        .collect()
}

/// Oracle-side evaluation of a reconstruction.
pub fn evaluate(r: &Reconstruction) -> Result<Evaluation> {
    let man = &r.forward.manifold;
    let q = r.forward.potential.values();
    let p = r.base;
    let r0 = r.scenario.r0;
    let offset = r.space.outer_offset();
    let points = corresponding_points(r);
    let empty_slices: Vec<usize> = (offset..points.len()).filter(|&i| points[i].is_none()).map(|i| i - offset).collect();
    let metric = metric_errors(r, &points);

    let oracle_q: Vec<f64> = (0..r.catalog.outer.len())
        .map(|c| points[offset + c].map_or(f64::NAN, |x| q[x.0]))
        .collect();
    let q_far_max = r
        .estimate
        .slices
        .iter()
        .filter_map(|s| s.q_hat.map(|v| (v - oracle_q[s.class]).abs()))
        .filter(|e| e.is_finite())
        .reduce(f64::max);
    let q_near_max = r
        .estimate
        .near
        .iter()
        .map(|n| (n.q_hat - q[n.point.0]).abs())
        .reduce(f64::max);

    let defined: Vec<GridPoint> = points.iter().flatten().copied().collect();
    let covering_radius = man
        .points()
        .collect::<Vec<_>>()
        .par_iter()
        .filter(|&&x| man.distance(x, p) >= 1.5 * r0)
        .map(|&x| man.distance_to_set(x, &defined))
        .reduce(|| 0.0, f64::max);

    let part = &r.partition;
    let proximity = man
        .points()
        .collect::<Vec<_>>()
        .par_iter()
        .filter(|&&x| man.distance(x, p) >= r0)
        .filter_map(|&x| {
            let c = r.catalog.class_of_point(part, x)?;
            let xi = points[offset + c]?;
            Some(man.distance(x, xi))
        })
        .reduce(|| 0.0, f64::max);

    let carried: Vec<(GridPoint, f64)> = r
        .estimate
        .slices
        .iter()
        .filter_map(|s| Some((points[offset + s.class]?, s.q_hat?)))
        .collect();
    let allowance = q_far_max.unwrap_or(f64::NAN) + q_near_max.unwrap_or(f64::NAN);
    let gaps: Vec<f64> = r
        .estimate
        .near
        .iter()
        .filter(|n| man.distance(n.point, p) >= 1.5 * r0)
        .filter_map(|n| {
            let (_, qi) = carried
                .iter()
                .min_by(|a, b| man.distance(n.point, a.0).total_cmp(&man.distance(n.point, b.0)))?;
            Some((n.q_hat - qi).abs())
        })
        .collect();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let overlap = OverlapCheck {
        points: gaps.len(),
        max_gap,
        allowance,
        holds: !gaps.is_empty() && max_gap <= allowance,
    };

    Ok(Evaluation {
        points,
        empty_slices,
        metric,
        oracle_q,
        q_far_max,
        q_near_max,
        covering_radius,
        proximity,
        overlap,
        sigma: sigma_table(&r.functional, &r.forward)?,
    })
}
