use std::fmt;

use serde::{Deserialize, Serialize};

use super::partition::CellPartition;
use crate::control::{AlphaKey, InfluenceFunctional};
use crate::error::{Error, Result};
use crate::geometry::GridPoint;

/// Nonnegative integers β₁…β_N, ordered lexicographically. Entry 0 means the
/// cell is inactive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(values: Vec<u32>, bound: u32) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v > bound) {
            return Err(Error::Catalog(format!("multi-index entry {v} above bound {bound}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    /// β_k = ⌊d(x, U_k)/ε⌋ + 1 for every cell.
    pub fn of_point(part: &CellPartition, x: GridPoint) -> Self {
        Self(
            (0..part.len())
                .map(|k| (part.cell_distance(k, x) / part.eps()).floor() as u32 + 1)
                .collect(),
        )
    }

    pub fn values(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, k: usize) -> u32 {
        self.0[k]
    }

    /// Active coordinates (β_k > 0).
    pub fn active(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.0.iter().copied().enumerate().filter(|&(_, v)| v > 0)
    }

    /// (β₁…β_L, 0…0).
    pub fn prefix(&self, l: usize) -> Self {
        let mut v = self.0.clone();
        v[l..].iter_mut().for_each(|x| *x = 0);
        Self(v)
    }

    /// β⟨l⟩: first `anchors` entries and entry `l`, all else 0.
    pub fn restricted(&self, anchors: usize, l: usize) -> Self {
        let mut v = self.prefix(anchors);
        v.0[l] = self.0[l];
        v
    }

    pub fn with(&self, k: usize, value: u32) -> Self {
        let mut v = self.clone();
        v.0[k] = value;
        v
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceVariant {
    /// d(x, U_k) ∈ [β_kε − ε, β_kε).
    Star,
    /// d(x, U_k) ∈ [β_kε − ε − ε², β_kε + ε²).
    Eps,
}

/// Inner and outer radius of the annulus for entry `v`. Radii are computed
/// the same way everywhere so that memo keys match bitwise.
pub fn annulus(eps: f64, v: u32, variant: SliceVariant) -> (f64, f64) {
    let top = v as f64 * eps;
    match variant {
        SliceVariant::Star => (top - eps, top),
        SliceVariant::Eps => (top - eps - eps * eps, top + eps * eps),
    }
}

pub fn slice_membership(part: &CellPartition, beta: &MultiIndex, variant: SliceVariant, x: GridPoint) -> bool {
    beta.active().all(|(k, v)| {
        let (lo, hi) = annulus(part.eps(), v, variant);
        let d = part.cell_distance(k, x);
        d >= lo && d < hi
    })
}

/// Σ_{x∈slice} f(x) hⁿ by direct grid summation.
pub fn direct_slice_integral(part: &CellPartition, f: &[f64], beta: &MultiIndex, variant: SliceVariant) -> f64 {
    let man = part.manifold();
    man.points()
        .filter(|&x| slice_membership(part, beta, variant, x))
        .map(|x| f[x.0])
        .sum::<f64>()
        * man.weight()
}

/// Signed M_α terms whose sum is the measure of the slice. Expanding
/// ∏(χ_{A_k} − χ_{B_k}) over the active cells and writing each intersection
/// by inclusion–exclusion over unions, every union that omits a cell cancels;
/// what remains is ∪_k D_k with D_k ∈ {A_k, B_k} and sign (−1)^{|K|+|R|+1},
/// R the cells taking the inner set B_k.
pub fn inclusion_exclusion_terms(
    part: &CellPartition,
    beta: &MultiIndex,
    variant: SliceVariant,
) -> Result<Vec<(f64, AlphaKey)>> {
    let active: Vec<(usize, f64, f64)> = beta
        .active()
        .map(|(k, v)| {
            let (lo, hi) = annulus(part.eps(), v, variant);
            (k, lo, hi)
        })
        .collect();
    let kk = active.len();
    if kk == 0 {
        return Err(Error::Catalog("slice without active cells".into()));
    }
    if kk > 16 {
        return Err(Error::Catalog(format!("{kk} active cells exceed the expansion limit")));
    }
    (0..1usize << kk)
        .map(|code| {
            let inner = code.count_ones() as usize;
            let radii = active
                .iter()
                .enumerate()
                .map(|(i, &(k, lo, hi))| (k, if code >> i & 1 == 1 { lo } else { hi }));
            let sign = if (kk + inner + 1).is_multiple_of(2) { 1.0 } else { -1.0 };
            Ok((sign, AlphaKey::new(radii)?))
        })
        .collect()
}

/// 𝓛ᵃ of the slice, reduced to the memoized functional on unions of
/// domains of influence.
pub fn slice_functional(
    func: &InfluenceFunctional,
    part: &CellPartition,
    beta: &MultiIndex,
    variant: SliceVariant,
) -> Result<f64> {
    let terms = inclusion_exclusion_terms(part, beta, variant)?;
    let mut sum = 0.0;
    for (coef, key) in &terms {
        if !key.is_empty() {
            sum += coef * func.value(key)?;
        }
    }
    Ok(sum)
}
