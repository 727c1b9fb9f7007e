use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};

use crate::control::InfluenceGeometry;
use crate::error::{Error, Result};
use crate::geometry::{DiscreteManifold, GridPoint};

/// How strictly the smallness assumptions on ε and r_L are enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmallnessPolicy {
    /// ε < r₀/64 and r_L < r₀/64.
    Strict,
    /// ε < r₀ only; desk-scale grids cannot resolve the strict regime.
    #[default]
    Relaxed,
}

/// Net points z₁…z_N of B(p, r₀/2) and the cells U₁…U_N around them.
/// The first `anchor_count` points are the r_L-separated anchors.
#[derive(Debug, Clone)]
pub struct CellPartition {
    base: GridPoint,
    r0: f64,
    eps: f64,
    r_l: f64,
    anchor_count: usize,
    net: Vec<GridPoint>,
    geometry: Arc<InfluenceGeometry>,
}

impl CellPartition {
    pub fn manifold(&self) -> &DiscreteManifold {
        self.geometry.manifold()
    }

    pub fn base(&self) -> GridPoint {
        self.base
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn r_l(&self) -> f64 {
        self.r_l
    }

    /// L.
    pub fn anchor_count(&self) -> usize {
        self.anchor_count
    }

    /// N.
    pub fn len(&self) -> usize {
        self.net.len()
    }

    pub fn is_empty(&self) -> bool {
        self.net.is_empty()
    }

    pub fn net(&self) -> &[GridPoint] {
        &self.net
    }

    pub fn cells(&self) -> &[Vec<GridPoint>] {
        self.geometry.cells()
    }

    pub fn geometry(&self) -> &Arc<InfluenceGeometry> {
        &self.geometry
    }

    /// d(x, U_k).
    #[inline]
    pub fn cell_distance(&self, k: usize, x: GridPoint) -> f64 {
        self.geometry.distance(k, x)
    }

    /// Index of the cell nearest to x (smallest index on ties).
    pub fn nearest_cell(&self, x: GridPoint) -> usize {
        (0..self.len())
            .min_by(|&a, &b| self.cell_distance(a, x).total_cmp(&self.cell_distance(b, x)))
            .expect("partition has cells")
    }

    /// Upper bound 1 + D/ε on multi-index entries.
    pub fn index_bound(&self) -> u32 {
        (1.0 + self.manifold().diameter() / self.eps).floor() as u32
    }

    /// Smallest entry with βε ≥ r₀/8.
    pub fn index_floor(&self) -> u32 {
        ((self.r0 / 8.0 / self.eps).ceil() as u32).max(1)
    }
}

/// Greedy extension of `chosen` by grid-order candidates at distance ≥ `sep`
/// from everything chosen so far.
fn extend_net(man: &DiscreteManifold, chosen: &mut Vec<GridPoint>, candidates: &[GridPoint], sep: f64) {
    for &x in candidates {
        if chosen.iter().all(|&z| man.distance(x, z) >= sep) {
            chosen.push(x);
        }
    }
}

pub fn build_partition(
    man: &DiscreteManifold,
    p: GridPoint,
    r0: f64,
    eps: f64,
    r_l: f64,
    policy: SmallnessPolicy,
) -> Result<CellPartition> {
    if !(r0 > 0.0 && eps > 0.0 && r_l > 0.0) {
        return Err(Error::Config(format!(
            "r0 = {r0}, eps = {eps}, r_L = {r_l} must be positive"
        )));
    }
    match policy {
        SmallnessPolicy::Strict if eps >= r0 / 64.0 || r_l >= r0 / 64.0 => {
            return Err(Error::Config(format!(
                "strict smallness requires eps, r_L < r0/64 = {}",
                r0 / 64.0
            )))
        }
        _ if eps >= r0 => {
            return Err(Error::Config(format!("eps = {eps} must be below r0 = {r0}")));
        }
        _ => {}
    }
    if r_l < eps / 2.0 {
        return Err(Error::Config(format!(
            "r_L = {r_l} below eps/2 = {}: anchors would not be part of the eps/2-net",
            eps / 2.0
        )));
    }
    if 0.75 * r0 >= man.injectivity_radius() {
        return Err(Error::BeyondInjectivity {
            radius: 0.75 * r0,
            injectivity: man.injectivity_radius(),
        });
    }
    let half = man.ball_points(p, r0 / 2.0);
    let mut net = Vec::new();
    extend_net(man, &mut net, &half, r_l);
    let anchor_count = net.len();
    extend_net(man, &mut net, &half, eps / 2.0);

    let outer = man.ball_points(p, 0.75 * r0);
    let mut cells = vec![Vec::new(); net.len()];
    for &x in &outer {
        let (k, d) = net
            .iter()
            .enumerate()
            .map(|(k, &z)| (k, man.distance(x, z)))
            .fold((usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        if d < eps / 2.0 {
            cells[k].push(x);
        }
    }
    let part = CellPartition {
        base: p,
        r0,
        eps,
        r_l,
        anchor_count,
        geometry: Arc::new(InfluenceGeometry::new(man, cells)),
        net,
    };
    validate(&part)?;
    info!(
        "partition: N = {}, L = {}, N·eps^n = {:.3}",
        part.len(),
        anchor_count,
        part.len() as f64 * eps.powi(man.dim() as i32)
    );
    Ok(part)
}

/// Brute-force checks of covering, diameter, inner ball and disjointness.
pub fn validate(part: &CellPartition) -> Result<()> {
    let man = part.manifold();
    let eps = part.eps;
    let mut owner = vec![usize::MAX; man.len()];
    for (k, cell) in part.cells().iter().enumerate() {
        for &x in cell {
            if owner[x.0] != usize::MAX {
                return Err(Error::Partition(format!(
                    "grid point {} in cells {} and {k}",
                    x.0, owner[x.0]
                )));
            }
            owner[x.0] = k;
            if man.distance(x, part.base) >= 0.75 * part.r0 {
                return Err(Error::Partition(format!("cell {k} leaves B(p, 3r0/4)")));
            }
        }
        for (i, &x) in cell.iter().enumerate() {
            for &y in &cell[i + 1..] {
                if man.distance(x, y) > eps {
                    return Err(Error::Partition(format!("cell {k} has diameter above eps")));
                }
            }
        }
        for y in man.ball_points(part.net[k], eps / 4.0) {
            if owner[y.0] != k {
                return Err(Error::Partition(format!("cell {k} misses its eps/4-ball")));
            }
        }
    }
    if let Some(x) = man
        .ball_points(part.base, part.r0 / 2.0)
        .into_iter()
        .find(|x| owner[x.0] == usize::MAX)
    {
        return Err(Error::Partition(format!(
            "grid point {} of B(p, r0/2) is not covered",
            x.0
        )));
    }
    Ok(())
}
