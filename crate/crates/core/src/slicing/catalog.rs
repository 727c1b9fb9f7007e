use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use super::partition::CellPartition;
use super::slice::{annulus, slice_functional, MultiIndex, SliceVariant};
use crate::control::InfluenceFunctional;
use crate::error::{Error, Result};
use crate::geometry::GridPoint;
use crate::unit_ball_volume;

/// How acceptance values are produced.
#[derive(Clone)]
pub enum CatalogSource {
    /// Exact grid integrals of φ₁²; every multi-index is tested.
    Oracle { phi1: Arc<Vec<f64>> },
    /// 𝓛ᵃ via the memoized functional, with a cap on the number of distinct
    /// M_α evaluations.
    Blind {
        functional: Arc<InfluenceFunctional>,
        budget: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterEntry {
    /// τ = (β₁…β_L, 0…0); one entry per class.
    pub tau: MultiIndex,
    /// The accepted multi-index chosen for the class.
    pub beta: MultiIndex,
    /// Acceptance value 𝓛ᵃ(M^ε_{β⟨l⟩}) for l = L+1…N.
    pub acceptance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerEntry {
    pub point: GridPoint,
    /// d(ξ, z_k) for every net point.
    pub coordinates: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceCatalog {
    pub eps: f64,
    pub anchors: usize,
    pub c1: f64,
    pub c_star: f64,
    pub threshold: f64,
    /// Number of accepted multi-indices before the τ reduction.
    pub accepted: f64,
    pub inner: Vec<InnerEntry>,
    pub outer: Vec<OuterEntry>,
    #[serde(skip)]
    lookup: HashMap<MultiIndex, usize>,
}

/// c(n) = ν_n/2ⁿ and c* = ½c₁²c(n).
pub fn acceptance_constant(n: usize, c1: f64) -> f64 {
    0.5 * c1 * c1 * unit_ball_volume(n) / 2f64.powi(n as i32)
}

impl SliceCatalog {
    /// I_L.
    pub fn class_count(&self) -> usize {
        self.outer.len()
    }

    /// Index of the outer entry with the given τ.
    pub fn class_of(&self, tau: &MultiIndex) -> Option<usize> {
        self.lookup.get(tau).copied()
    }

    /// Class of the star slice containing x.
    pub fn class_of_point(&self, part: &CellPartition, x: GridPoint) -> Option<usize> {
        self.class_of(&MultiIndex::of_point(part, x).prefix(self.anchors))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Catalog(e.to_string()))?;
        let err = |e: csv::Error| Error::Catalog(e.to_string());
        w.write_record(["kind", "id", "index", "tau", "acceptance"]).map_err(err)?;
        for (i, e) in self.inner.iter().enumerate() {
            w.write_record([
                "inner".to_string(),
                i.to_string(),
                e.point.0.to_string(),
                String::new(),
                String::new(),
            ])
            .map_err(err)?;
        }
        for (i, e) in self.outer.iter().enumerate() {
            let acc: Vec<String> = e.acceptance.iter().map(|v| format!("{v:e}")).collect();
            w.write_record([
                "outer".to_string(),
                i.to_string(),
                e.beta.to_string(),
                e.tau.to_string(),
                acc.join(";"),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Entries v with d inside the ε-annulus of v, within [floor, bound].
fn eps_values(part: &CellPartition, d: f64, floor: u32, bound: u32) -> Vec<u32> {
    let centre = (d / part.eps()).floor() as i64 + 1;
    (centre - 1..=centre + 1)
        .filter(|&v| v >= floor as i64 && v <= bound as i64)
        .map(|v| v as u32)
        .filter(|&v| {
            let (lo, hi) = annulus(part.eps(), v, SliceVariant::Eps);
            d >= lo && d < hi
        })
        .collect()
}

/// Γ_ε: greedy maximal ε-separated net of B(p, r₀) starting at p.
pub fn inner_net(part: &CellPartition) -> Vec<InnerEntry> {
    let man = part.manifold();
    let p = part.base();
    let mut pts = vec![p];
    for x in man.ball_points(p, part.r0()) {
        if pts.iter().all(|&z| man.distance(x, z) >= part.eps()) {
            pts.push(x);
        }
    }
    pts.into_iter()
        .map(|x| InnerEntry {
            point: x,
            coordinates: part.net().iter().map(|&z| man.distance(x, z)).collect(),
        })
        .collect()
}

/// Relative gap under which two acceptance values count as tied, so that
/// round-off between summation orders cannot change the representative.
const TIE: f64 = 1e-9;

struct Candidate {
    tau: MultiIndex,
    /// Per l ≥ L: (v, value) for every v whose value passed.
    passing: Vec<Vec<(u32, f64)>>,
}

fn finish(part: &CellPartition, c1: f64, threshold: f64, candidates: Vec<Candidate>) -> SliceCatalog {
    let mut outer = Vec::new();
    let mut accepted = 0.0;
    let big_l = part.anchor_count();
    for c in candidates {
        if c.passing.iter().any(|p| p.is_empty()) {
            continue;
        }
        accepted += c.passing.iter().map(|p| p.len() as f64).product::<f64>();
        let mut beta = c.tau.clone();
        let mut acceptance = Vec::with_capacity(c.passing.len());
        for (i, p) in c.passing.iter().enumerate() {
            let &(v, val) = p
                .iter()
                .fold(None, |best: Option<&(u32, f64)>, x| match best {
                    Some(b) if x.1 - b.1 <= TIE * b.1.abs().max(x.1.abs()) => Some(b),
                    _ => Some(x),
                })
                .expect("nonempty");
            beta = beta.with(big_l + i, v);
            acceptance.push(val);
        }
        outer.push(OuterEntry {
            tau: c.tau,
            beta,
            acceptance,
        });
    }
    outer.sort_by(|a, b| a.tau.cmp(&b.tau));
    let lookup = outer.iter().enumerate().map(|(i, e)| (e.tau.clone(), i)).collect();
    let n = part.manifold().dim();
    SliceCatalog {
        eps: part.eps(),
        anchors: big_l,
        c1,
        c_star: acceptance_constant(n, c1),
        threshold,
        accepted,
        inner: inner_net(part),
        outer,
        lookup,
    }
}

fn check_shape(part: &CellPartition, c1: f64) -> Result<()> {
    if !(c1 > 0.0) {
        return Err(Error::NonPositiveLowerBound(c1));
    }
    if part.anchor_count() >= part.len() {
        return Err(Error::Catalog(format!(
            "no criterion cells: L = N = {}",
            part.len()
        )));
    }
    if part.anchor_count() > 6 {
        return Err(Error::Catalog(format!(
            "L = {} exceeds 6; raise r_L",
            part.anchor_count()
        )));
    }
    Ok(())
}

/// Tests the criterion 𝓛ᵃ(M^ε_{β⟨l⟩}) ≥ c*ε^{2n} for all l > L over all
/// multi-indices with floor ≤ β_k ≤ 1 + D/ε and reduces to τ classes.
pub fn build_catalog(part: &CellPartition, c1: f64, source: &CatalogSource) -> Result<SliceCatalog> {
    check_shape(part, c1)?;
    let n = part.manifold().dim();
    let threshold = acceptance_constant(n, c1) * part.eps().powi(2 * n as i32);
    let candidates = match source {
        CatalogSource::Oracle { phi1 } => oracle_candidates(part, phi1, threshold)?,
        CatalogSource::Blind { functional, budget } => {
            blind_candidates(part, functional, *budget, threshold)?
        }
    };
    let cat = finish(part, c1, threshold, candidates);
    info!(
        "catalog: {} accepted multi-indices, I_L = {}, {} inner entries",
        cat.accepted,
        cat.class_count(),
        cat.inner.len()
    );
    Ok(cat)
}

/// With exact integrals the criterion separates over l: the value for
/// β⟨l⟩ is the φ₁²-mass of grid points whose ε-profile admits τ on the
/// anchors and β_l on cell l. Every τ outside the realized profiles has
/// zero mass and is rejected, so the enumeration is exhaustive.
fn oracle_candidates(part: &CellPartition, phi1: &[f64], threshold: f64) -> Result<Vec<Candidate>> {
    let man = part.manifold();
    if phi1.len() != man.len() {
        return Err(Error::Catalog("oracle eigenfunction has the wrong length".into()));
    }
    let (floor, bound) = (part.index_floor(), part.index_bound());
    let big_l = part.anchor_count();
    let big_n = part.len();
    let w = man.weight();
    let mut mass: BTreeMap<MultiIndex, Vec<BTreeMap<u32, f64>>> = BTreeMap::new();
    for x in man.points() {
        let profile: Vec<Vec<u32>> = (0..big_n)
            .map(|k| eps_values(part, part.cell_distance(k, x), floor, bound))
            .collect();
        if profile[..big_l].iter().any(|v| v.is_empty()) {
            continue;
        }
        let m = phi1[x.0] * phi1[x.0] * w;
        // all τ admitted by x on the anchors
        let mut prefixes = vec![vec![0u32; big_n]];
        for (k, vals) in profile[..big_l].iter().enumerate() {
            prefixes = prefixes
                .into_iter()
                .flat_map(|p| {
                    vals.iter().map(move |&v| {
                        let mut q = p.clone();
                        q[k] = v;
                        q
                    })
                })
                .collect();
        }
        for p in prefixes {
            let tau = MultiIndex::new(p, bound)?;
            let slot = mass
                .entry(tau)
                .or_insert_with(|| vec![BTreeMap::new(); big_n - big_l]);
            for (i, vals) in profile[big_l..].iter().enumerate() {
                for &v in vals {
                    *slot[i].entry(v).or_insert(0.0) += m;
                }
            }
        }
    }
    Ok(mass
        .into_iter()
        .map(|(tau, per_l)| Candidate {
            tau,
            passing: per_l
                .into_iter()
                .map(|m| m.into_iter().filter(|&(_, s)| s >= threshold).collect())
                .collect(),
        })
        .collect())
}

/// Hierarchical enumeration: prefixes over the anchors grow one coordinate at
/// a time and are dropped once the partial slice fails the threshold; each
/// surviving τ is then scanned coordinate by coordinate and rejected at the
/// first l with no passing value.
fn blind_candidates(
    part: &CellPartition,
    func: &InfluenceFunctional,
    budget: usize,
    threshold: f64,
) -> Result<Vec<Candidate>> {
    let (floor, bound) = (part.index_floor(), part.index_bound());
    let big_l = part.anchor_count();
    let big_n = part.len();
    let values: Vec<u32> = (floor..=bound).collect();
    let eval = |beta: &MultiIndex| -> Result<f64> {
        let v = slice_functional(func, part, beta, SliceVariant::Eps)?;
        if func.memo_len() > budget {
            return Err(Error::Catalog(format!(
                "combinatorial budget exceeded: {} functional evaluations (budget {budget})",
                func.memo_len()
            )));
        }
        Ok(v)
    };
    let mut prefixes = vec![MultiIndex::zeros(big_n)];
    for k in 0..big_l {
        let next: Vec<Option<MultiIndex>> = prefixes
            .par_iter()
            .flat_map_iter(|p| values.iter().map(move |&v| p.with(k, v)))
            .map(|b| Ok((eval(&b)? >= threshold).then_some(b)))
            .collect::<Result<_>>()?;
        prefixes = next.into_iter().flatten().collect();
        info!("blind catalog: {} prefixes after anchor {}", prefixes.len(), k + 1);
    }
    prefixes
        .into_par_iter()
        .map(|tau| {
            let mut passing = Vec::with_capacity(big_n - big_l);
            for l in big_l..big_n {
                let mut ok = Vec::new();
                for &v in &values {
                    let val = eval(&tau.with(l, v))?;
                    if val >= threshold {
                        ok.push((v, val));
                    }
                }
                let empty = ok.is_empty();
                passing.push(ok);
                if empty {
                    break;
                }
            }
            Ok(Candidate { tau, passing })
        })
        .collect()
}
