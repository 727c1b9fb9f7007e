//! Finite metric space on the slice catalog: distance coordinates, an
//! anchored proximity graph and its shortest-path metric.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::GridPoint;
use crate::slicing::{CellPartition, SliceCatalog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Inner,
    Outer,
}

/// Which estimator produced d̂ for a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Anchor,
    Local,
    Path,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricConfig {
    /// Local-edge radius R in coordinate space (default ε^{1/8}).
    pub radius: Option<f64>,
    /// Padding on anchor edges, as a multiple of ε.
    pub anchor_pad: f64,
    /// Padding on local edges, as a multiple of ε.
    pub local_pad: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            radius: None,
            anchor_pad: 0.5,
            local_pad: 1.0,
        }
    }
}

/// Entries in catalog order: inner entries (index 0 is p), then one entry per
/// τ class.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteMetricSpace {
    pub labels: Vec<String>,
    pub kinds: Vec<EntryKind>,
    /// Row-major d̂.
    pub dist: Vec<f64>,
    pub provenance: Vec<Provenance>,
    pub coordinates: Vec<Vec<f64>>,
    pub radius: f64,
}

impl FiniteMetricSpace {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.dist[i * self.len() + k]
    }

    pub fn provenance(&self, i: usize, k: usize) -> Provenance {
        self.provenance[i * self.len() + k]
    }

    /// Index of the first outer entry.
    pub fn outer_offset(&self) -> usize {
        self.kinds.iter().take_while(|&&k| k == EntryKind::Inner).count()
    }

    /// Largest violation of d̂_ik ≥ ‖Φ_i − Φ_k‖_∞ − 2ε (0 if none).
    pub fn lower_bound_violation(&self, eps: f64) -> f64 {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|k| sup_diff(&self.coordinates[i], &self.coordinates[k]) - 2.0 * eps - self.get(i, k))
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Largest |d̂_{0i} − β_{k(p)}ε| over outer entries, k(p) the cell nearest to p.
    pub fn base_consistency(&self, part: &CellPartition) -> f64 {
        let k = part.nearest_cell(part.base());
        (self.outer_offset()..self.len())
            .map(|i| (self.get(0, i) - self.coordinates[i][k]).abs())
            .fold(0.0, f64::max)
    }

    /// Largest d̂_ik − d̂_ij − d̂_jk (≤ 0 up to rounding for a metric).
    pub fn triangle_excess(&self) -> f64 {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut worst = f64::NEG_INFINITY;
                for j in 0..n {
                    let dij = self.get(i, j);
                    for k in 0..n {
                        worst = worst.max(self.get(i, k) - dij - self.get(j, k));
                    }
                }
                worst
            })
            .reduce(|| f64::NEG_INFINITY, f64::max)
    }

    /// Matrix with a label header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = |e: csv::Error| Error::Config(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let mut header = vec![String::from("label")];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for i in 0..self.len() {
            let mut row = vec![self.labels[i].clone()];
            row.extend((0..self.len()).map(|k| format!("{:.10}", self.get(i, k))));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[inline]
fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Outer entry i → (β₁ε…β_Nε); inner entry ξ → (d(ξ,z₁)…d(ξ,z_N)).
pub fn distance_coordinates(catalog: &SliceCatalog, index: usize) -> Vec<f64> {
    let inner = catalog.inner.len();
    if index < inner {
        catalog.inner[index].coordinates.clone()
    } else {
        catalog.outer[index - inner]
            .beta
            .values()
            .iter()
            .map(|&b| b as f64 * catalog.eps)
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct State {
    d: f64,
    v: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other.d.total_cmp(&self.d).then_with(|| other.v.cmp(&self.v))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(State { d: 0.0, v: source });
    while let Some(State { d, v }) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(u, w) in &adj[v] {
            let nd = d + w;
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(State { d: nd, v: u });
            }
        }
    }
    dist
}

pub fn build_metric(part: &CellPartition, catalog: &SliceCatalog, config: &MetricConfig) -> Result<FiniteMetricSpace> {
    let man = part.manifold();
    let eps = catalog.eps;
    let radius = config.radius.unwrap_or(eps.powf(0.125));
    let inner = catalog.inner.len();
    let n = inner + catalog.outer.len();
    if inner == 0 {
        return Err(Error::Config("catalog has no inner entries".into()));
    }
    let coordinates: Vec<Vec<f64>> = (0..n).map(|i| distance_coordinates(catalog, i)).collect();
    let mut labels: Vec<String> = catalog.inner.iter().map(|e| format!("inner:{}", e.point.0)).collect();
    labels[0] = "p".into();
    labels.extend(catalog.outer.iter().map(|e| format!("outer:{}", e.tau)));
    let mut kinds = vec![EntryKind::Inner; inner];
    kinds.extend(std::iter::repeat_n(EntryKind::Outer, catalog.outer.len()));

    let mut direct = vec![f64::INFINITY; n * n];
    let mut kind = vec![Provenance::Path; n * n];
    let mut put = |i: usize, k: usize, w: f64, p: Provenance| {
        if w < direct[i * n + k] {
            direct[i * n + k] = w;
            direct[k * n + i] = w;
            kind[i * n + k] = p;
            kind[k * n + i] = p;
        }
    };
    // anchor edges: exact between inner entries, through the nearest cell otherwise
    let near: Vec<(usize, f64)> = catalog
        .inner
        .iter()
        .map(|e| {
            let k = part.nearest_cell(e.point);
            (k, part.cell_distance(k, e.point))
        })
        .collect();
    for a in 0..inner {
        let xa: GridPoint = catalog.inner[a].point;
        for b in a + 1..inner {
            put(a, b, man.distance(xa, catalog.inner[b].point), Provenance::Anchor);
        }
        let (k, dk) = near[a];
        for i in inner..n {
            put(a, i, coordinates[i][k] + dk + config.anchor_pad * eps, Provenance::Anchor);
        }
    }
    // local edges between entries with nearby coordinate vectors
    let local: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .filter_map(|k| {
                    let d = sup_diff(&coordinates[i], &coordinates[k]);
                    (d <= radius).then_some((k, d + config.local_pad * eps))
                })
                .collect()
        })
        .collect();
    for (i, row) in local.iter().enumerate() {
        for &(k, w) in row {
            put(i, k, w, Provenance::Local);
        }
    }
    let adj: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&k| k != i && direct[i * n + k].is_finite())
                .map(|k| (k, direct[i * n + k]))
                .collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(&adj, s)).collect();
    let isolated: Vec<usize> = (0..n).filter(|&i| !rows[0][i].is_finite()).collect();
    if !isolated.is_empty() {
        return Err(Error::Disconnected(isolated));
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for k in i + 1..n {
            let d = rows[i][k].min(rows[k][i]);
            dist[i * n + k] = d;
            dist[k * n + i] = d;
        }
    }
    let provenance = (0..n * n)
        .map(|ik| {
            if ik / n != ik % n && dist[ik] == direct[ik] {
                kind[ik]
            } else {
                Provenance::Path
            }
        })
        .collect();
    Ok(FiniteMetricSpace {
        labels,
        kinds,
        dist,
        provenance,
        coordinates,
        radius,
    })
}

/// Range of ‖Φ_L(x) − Φ_L(y)‖/d(x, y) over grid pairs in `region` with
/// 0 < d(x, y) ≤ `max_dist`, Φ_L the exact distances to the anchors.
pub fn bi_lipschitz_range(part: &CellPartition, region: &[GridPoint], max_dist: f64) -> Option<(f64, f64)> {
    let man = part.manifold();
    let anchors = &part.net()[..part.anchor_count()];
    let phi = |x: GridPoint| -> Vec<f64> { anchors.iter().map(|&z| man.distance(x, z)).collect() };
    let coords: Vec<Vec<f64>> = region.iter().map(|&x| phi(x)).collect();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (i, &x) in region.iter().enumerate() {
        for (j, &y) in region.iter().enumerate().skip(i + 1) {
            let d = man.distance(x, y);
            if d > 0.0 && d <= max_dist {
                let r = coords[i]
                    .iter()
                    .zip(&coords[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    / d;
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
    }
    lo.is_finite().then_some((lo, hi))
}
