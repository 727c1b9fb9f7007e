use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::gram::assemble_gram;
use super::qcqp::{project_onto_intersection, Ellipsoid, QcqpOptions, QcqpSolution, QuadraticForm};
use crate::error::{Error, Result};
use crate::geometry::{DiscreteManifold, GridPoint};
use crate::spectra::SpectralData;

/// Canonical multi-radius: (cell, radius) pairs with radius > 0, sorted by
/// cell. Radii are compared bitwise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AlphaKey(Vec<(u32, u64)>);

impl AlphaKey {
    pub fn new(radii: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut v = Vec::new();
        for (k, r) in radii {
            if r.is_nan() {
                return Err(Error::NegativeRadius(r));
            }
            if r > 0.0 {
                v.push((k as u32, r.to_bits()));
            }
        }
        v.sort_unstable();
        if v.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("cell listed twice in a multi-radius".into()));
        }
        Ok(Self(v))
    }

    /// All cells with α = 0.
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().map(|&(k, r)| (k as usize, f64::from_bits(r)))
    }
}

/// Cells of U together with the distance field of each cell, for exact
/// domain-of-influence membership.
#[derive(Debug, Clone)]
pub struct InfluenceGeometry {
    man: DiscreteManifold,
    cells: Vec<Vec<GridPoint>>,
    fields: Vec<Vec<f64>>,
}

impl InfluenceGeometry {
    pub fn new(man: &DiscreteManifold, cells: Vec<Vec<GridPoint>>) -> Self {
        let fields = cells.par_iter().map(|c| man.distance_field(c)).collect();
        Self {
            man: man.clone(),
            cells,
            fields,
        }
    }

    pub fn manifold(&self) -> &DiscreteManifold {
        &self.man
    }

    pub fn cells(&self) -> &[Vec<GridPoint>] {
        &self.cells
    }

    /// d(x, U_k).
    #[inline]
    pub fn distance(&self, k: usize, x: GridPoint) -> f64 {
        self.fields[k][x.0]
    }

    pub fn field(&self, k: usize) -> &[f64] {
        &self.fields[k]
    }

    pub fn contains(&self, alpha: &AlphaKey, x: GridPoint) -> bool {
        alpha.entries().any(|(k, r)| self.fields[k][x.0] < r)
    }
}

/// Constraint data of the admissible set: ‖v‖² ≤ 1, Σλⱼvⱼ² ≤ E² + δ and
/// vᵀA_kv ≤ (ε₁ + Jλ_J^{1/2}δ)² for every cell with α_k > 0.
#[derive(Debug, Clone)]
pub struct AdmissibleSetSpec {
    pub mode_count: usize,
    pub energy_bound: f64,
    pub slack: f64,
    pub delta: f64,
    pub alpha: AlphaKey,
    eigenvalues: Vec<f64>,
    forms: Vec<QuadraticForm>,
}

impl AdmissibleSetSpec {
    /// Assembles the Gram matrix of every cell with α_k > 0.
    pub fn new(
        data: &SpectralData,
        cells: &[Vec<GridPoint>],
        alpha: AlphaKey,
        energy_bound: f64,
        slack: f64,
    ) -> Result<Self> {
        let forms = alpha
            .entries()
            .map(|(k, r)| {
                let cell = cells
                    .get(k)
                    .ok_or_else(|| Error::Config(format!("no cell {k}")))?;
                QuadraticForm::new(assemble_gram(data, cell, r)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_forms(data, alpha, forms, energy_bound, slack)
    }

    /// Uses precomputed Gram forms, one per entry of `alpha`.
    pub fn from_forms(
        data: &SpectralData,
        alpha: AlphaKey,
        forms: Vec<QuadraticForm>,
        energy_bound: f64,
        slack: f64,
    ) -> Result<Self> {
        if !(energy_bound >= 0.0) || !(slack >= 0.0) {
            return Err(Error::Config(format!(
                "energy bound {energy_bound} and slack {slack} must be nonnegative"
            )));
        }
        if forms.len() != alpha.0.len() {
            return Err(Error::Config("one Gram form per active cell required".into()));
        }
        Ok(Self {
            mode_count: data.mode_count(),
            energy_bound,
            slack,
            delta: data.delta(),
            alpha,
            eigenvalues: data.eigenvalues().to_vec(),
            forms,
        })
    }

    pub fn ball_cap(&self) -> f64 {
        1.0
    }

    pub fn energy_cap(&self) -> f64 {
        self.energy_bound * self.energy_bound + self.delta
    }

    pub fn wave_cap(&self) -> f64 {
        let j = self.mode_count as f64;
        let top = self.eigenvalues.last().copied().unwrap_or(0.0).max(0.0);
        let r = self.slack + j * top.sqrt() * self.delta;
        r * r
    }

    pub fn ellipsoids(&self) -> Vec<Ellipsoid> {
        let j = self.mode_count;
        let mut sets = vec![
            Ellipsoid::ball(j, self.ball_cap()),
            Ellipsoid::diagonal(&self.eigenvalues, self.energy_cap()),
        ];
        let cap = self.wave_cap();
        sets.extend(self.forms.iter().map(|f| Ellipsoid::dense(f, cap)));
        sets
    }
}

/// Projection of `u` onto the admissible set.
pub fn minimize_over_admissible(spec: &AdmissibleSetSpec, u: &[f64], opts: &QcqpOptions) -> Result<QcqpSolution> {
    if u.len() != spec.mode_count {
        return Err(Error::Config(format!(
            "{} coefficients for {} modes",
            u.len(),
            spec.mode_count
        )));
    }
    project_onto_intersection(u, &spec.ellipsoids(), opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffCoefficients {
    pub b: Vec<f64>,
    pub alpha: Vec<(usize, f64)>,
    pub sigma_target: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl CutoffCoefficients {
    /// Σ b_j².
    pub fn functional(&self) -> f64 {
        self.b.iter().map(|b| b * b).sum()
    }
}

/// b = u − w* with w* the projection of u onto the admissible set.
pub fn recover_cutoff(
    spec: &AdmissibleSetSpec,
    u: &[f64],
    sigma_target: f64,
    opts: &QcqpOptions,
) -> Result<CutoffCoefficients> {
    let w = minimize_over_admissible(spec, u, opts)?;
    Ok(CutoffCoefficients {
        b: u.iter().zip(&w.x).map(|(a, b)| a - b).collect(),
        alpha: spec.alpha.entries().collect(),
        sigma_target,
        iterations: w.sweeps + w.newton_steps,
        residual: w.kkt_residual,
    })
}

/// How 𝓛ᵃ(M_α) is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LaMode {
    /// Σ_{x∈M_α} φ₁(x)² hⁿ from the forward model.
    Oracle,
    /// Σ b_j² from the admissible-set minimization.
    Blind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaRecord {
    pub value: f64,
    pub mode: LaMode,
    pub iterations: usize,
    pub residual: f64,
    /// b, kept in blind mode for the oracle comparison.
    pub coefficients: Option<Vec<f64>>,
}

enum Source {
    Oracle { phi1_sq: Vec<f64> },
    Blind {
        data: Arc<SpectralData>,
        energy_bound: f64,
        slack: f64,
        sigma_target: f64,
        options: QcqpOptions,
        grams: Mutex<HashMap<(u32, u64), QuadraticForm>>,
    },
}

/// Memoized 𝓛ᵃ(M_α) over a fixed set of cells, safe to share between
/// threads. Values are deterministic, so concurrent inserts of one key agree.
pub struct InfluenceFunctional {
    geometry: Arc<InfluenceGeometry>,
    source: Source,
    memo: Mutex<HashMap<AlphaKey, Arc<LaRecord>>>,
}

impl InfluenceFunctional {
    /// Exact integrals of φ₁² (full-grid first eigenfunction).
    pub fn oracle(geometry: Arc<InfluenceGeometry>, phi1: &[f64]) -> Result<Self> {
        if phi1.len() != geometry.man.len() {
            return Err(Error::Config("oracle eigenfunction has the wrong length".into()));
        }
        Ok(Self {
            geometry,
            source: Source::Oracle {
                phi1_sq: phi1.iter().map(|v| v * v).collect(),
            },
            memo: Mutex::new(HashMap::new()),
        })
    }

    /// Minimization-based values with u = φ₁, i.e. u-coefficients e₁.
    pub fn blind(
        geometry: Arc<InfluenceGeometry>,
        data: Arc<SpectralData>,
        energy_bound: f64,
        slack: f64,
        sigma_target: f64,
        options: QcqpOptions,
    ) -> Self {
        Self {
            geometry,
            source: Source::Blind {
                data,
                energy_bound,
                slack,
                sigma_target,
                options,
                grams: Mutex::new(HashMap::new()),
            },
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn mode(&self) -> LaMode {
        match self.source {
            Source::Oracle { .. } => LaMode::Oracle,
            Source::Blind { .. } => LaMode::Blind,
        }
    }

    pub fn geometry(&self) -> &InfluenceGeometry {
        &self.geometry
    }

    pub fn memo_len(&self) -> usize {
        self.memo.lock().expect("memo poisoned").len()
    }

    /// Snapshot of all memoized records in key order.
    pub fn records(&self) -> Vec<(AlphaKey, Arc<LaRecord>)> {
        let mut v: Vec<_> = self
            .memo
            .lock()
            .expect("memo poisoned")
            .iter()
            .map(|(k, r)| (k.clone(), r.clone()))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    pub fn value(&self, alpha: &AlphaKey) -> Result<f64> {
        Ok(self.record(alpha)?.value)
    }

    pub fn record(&self, alpha: &AlphaKey) -> Result<Arc<LaRecord>> {
        if let Some(r) = self.memo.lock().expect("memo poisoned").get(alpha) {
            return Ok(r.clone());
        }
        let rec = Arc::new(self.compute(alpha)?);
        self.memo
            .lock()
            .expect("memo poisoned")
            .entry(alpha.clone())
            .or_insert_with(|| rec.clone());
        Ok(rec)
    }

    fn compute(&self, alpha: &AlphaKey) -> Result<LaRecord> {
        for (k, _) in alpha.entries() {
            if k >= self.geometry.cells.len() {
                return Err(Error::Config(format!("no cell {k}")));
            }
        }
        match &self.source {
            Source::Oracle { phi1_sq } => {
                let g = &self.geometry;
                let sum: f64 = g
                    .man
                    .points()
                    .filter(|&x| g.contains(alpha, x))
                    .map(|x| phi1_sq[x.0])
                    .sum();
                Ok(LaRecord {
                    value: sum * g.man.weight(),
                    mode: LaMode::Oracle,
                    iterations: 0,
                    residual: 0.0,
                    coefficients: None,
                })
            }
            Source::Blind {
                data,
                energy_bound,
                slack,
                sigma_target,
                options,
                grams,
            } => {
                let forms = alpha
                    .0
                    .iter()
                    .map(|&(k, bits)| self.gram(data, grams, k, bits))
                    .collect::<Result<Vec<_>>>()?;
                let spec = AdmissibleSetSpec::from_forms(data, alpha.clone(), forms, *energy_bound, *slack)?;
                let mut u = vec![0.0; data.mode_count()];
                u[0] = 1.0;
                let c = match recover_cutoff(&spec, &u, *sigma_target, options) {
                    Ok(c) => c,
                    Err(Error::MinimizerStalled {
                        iterations,
                        residual,
                        best,
                    }) => {
                        warn!("𝓛ᵃ minimization stalled at residual {residual:e}; using the best iterate");
                        CutoffCoefficients {
                            b: u.iter().zip(&best).map(|(a, b)| a - b).collect(),
                            alpha: alpha.entries().collect(),
                            sigma_target: *sigma_target,
                            iterations,
                            residual,
                        }
                    }
                    Err(e) => return Err(e),
                };
                Ok(LaRecord {
                    value: c.functional(),
                    mode: LaMode::Blind,
                    iterations: c.iterations,
                    residual: c.residual,
                    coefficients: Some(c.b),
                })
            }
        }
    }

    fn gram(
        &self,
        data: &SpectralData,
        grams: &Mutex<HashMap<(u32, u64), QuadraticForm>>,
        k: u32,
        bits: u64,
    ) -> Result<QuadraticForm> {
        if let Some(f) = grams.lock().expect("gram cache poisoned").get(&(k, bits)) {
            return Ok(f.clone());
        }
        let a = assemble_gram(data, &self.geometry.cells[k as usize], f64::from_bits(bits))?;
        let f = QuadraticForm::new(a)?;
        Ok(grams
            .lock()
            .expect("gram cache poisoned")
            .entry((k, bits))
            .or_insert(f)
            .clone())
    }

    /// Writes the memo table under a scenario hash.
    pub fn save(&self, path: &Path, scenario_hash: &[u8; 32]) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let records = self.records();
        let put = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            w.write_all(MEMO_MAGIC)?;
            w.write_all(scenario_hash)?;
            w.write_all(&(records.len() as u64).to_le_bytes())?;
            for (key, rec) in &records {
                w.write_all(&(key.0.len() as u32).to_le_bytes())?;
                for &(k, r) in &key.0 {
                    w.write_all(&k.to_le_bytes())?;
                    w.write_all(&r.to_le_bytes())?;
                }
                w.write_all(&rec.value.to_le_bytes())?;
                w.write_all(&[rec.mode as u8])?;
                w.write_all(&(rec.iterations as u64).to_le_bytes())?;
                w.write_all(&rec.residual.to_le_bytes())?;
                let b = rec.coefficients.as_deref().unwrap_or(&[]);
                w.write_all(&(b.len() as u32).to_le_bytes())?;
                for v in b {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()
        };
        put(&mut w).map_err(|e| Error::io(path, e))
    }

    /// Loads records saved under the same scenario hash and mode. Returns
    /// the number of records loaded; files for other scenarios are ignored.
    pub fn load(&self, path: &Path, scenario_hash: &[u8; 32]) -> Result<usize> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MEMO_MAGIC {
            return Err(Error::Archive("not a memo table".into()));
        }
        let mut hash = [0u8; 32];
        r.read_exact(&mut hash).map_err(io)?;
        if &hash != scenario_hash {
            return Ok(0);
        }
        let count = read_u64(&mut r).map_err(io)?;
        let mode = self.mode();
        let mut loaded = Vec::new();
        for _ in 0..count {
            let len = read_u32(&mut r).map_err(io)? as usize;
            let mut key = Vec::with_capacity(len);
            for _ in 0..len {
                key.push((read_u32(&mut r).map_err(io)?, read_u64(&mut r).map_err(io)?));
            }
            let value = f64::from_bits(read_u64(&mut r).map_err(io)?);
            let mut m = [0u8; 1];
            r.read_exact(&mut m).map_err(io)?;
            let iterations = read_u64(&mut r).map_err(io)? as usize;
            let residual = f64::from_bits(read_u64(&mut r).map_err(io)?);
            let blen = read_u32(&mut r).map_err(io)? as usize;
            let b = (0..blen)
                .map(|_| read_u64(&mut r).map(f64::from_bits))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(io)?;
            let rec_mode = match m[0] {
                0 => LaMode::Oracle,
                1 => LaMode::Blind,
                other => return Err(Error::Archive(format!("unknown mode tag {other}"))),
            };
            if rec_mode == mode {
                loaded.push((
                    AlphaKey(key),
                    Arc::new(LaRecord {
                        value,
                        mode: rec_mode,
                        iterations,
                        residual,
                        coefficients: (blen > 0).then_some(b),
                    }),
                ));
            }
        }
        let n = loaded.len();
        self.memo.lock().expect("memo poisoned").extend(loaded);
        Ok(n)
    }
}

const MEMO_MAGIC: &[u8; 4] = b"ISLM";

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::linalg::norm;
    use crate::spectra::{solve_forward, ForwardSolution, PotentialField, PotentialSpec};

    fn setup(m: usize, spec: PotentialSpec, j: usize) -> (ForwardSolution, Arc<SpectralData>, Arc<InfluenceGeometry>) {
        let man = DiscreteManifold::flat_torus(2, m).unwrap();
        let q = PotentialField::sample(&man, &spec, 2.0).unwrap();
        let sol = solve_forward(&man, &q, j).unwrap();
        let p = man.point_at(&[PI, PI]);
        let data = Arc::new(sol.restrict(&man.ball_points(p, 2.0)));
        let cells = vec![
            man.ball_points(p, 0.35),
            man.ball_points(man.point_at(&[PI + 0.8, PI]), 0.35),
        ];
        let geo = Arc::new(InfluenceGeometry::new(&man, cells));
        (sol, data, geo)
    }

    #[test]
    fn alpha_key_is_canonical() {
        let a = AlphaKey::new([(3, 0.5), (1, 0.2), (2, 0.0)]).unwrap();
        let b = AlphaKey::new([(1, 0.2), (3, 0.5)]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.entries().collect::<Vec<_>>(), vec![(1, 0.2), (3, 0.5)]);
        assert!(AlphaKey::new([(0, 0.0)]).unwrap().is_empty());
        assert!(AlphaKey::new([(1, 0.2), (1, 0.3)]).is_err());
    }

    #[test]
    fn oracle_values() {
        let (sol, _, geo) = setup(24, PotentialSpec::constant(1.0), 4);
        let f = InfluenceFunctional::oracle(geo.clone(), sol.mode(0)).unwrap();
        let all = AlphaKey::new([(0, 10.0)]).unwrap();
        assert!((f.value(&all).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(f.value(&AlphaKey::empty()).unwrap(), 0.0);
        let a = AlphaKey::new([(0, 0.9), (1, 0.4)]).unwrap();
        let man = geo.manifold();
        let count = man.points().filter(|&x| geo.contains(&a, x)).count();
        let vol = count as f64 * man.weight();
        assert!((f.value(&a).unwrap() - vol / (4.0 * PI * PI)).abs() < 1e-12);
        assert_eq!(f.mode(), LaMode::Oracle);
    }

    #[test]
    fn oracle_is_monotone_in_alpha() {
        let (sol, _, geo) = setup(24, PotentialSpec::cos_x1(1.0, 0.3), 4);
        let f = InfluenceFunctional::oracle(geo, sol.mode(0)).unwrap();
        let mut last = 0.0;
        for i in 0..20 {
            let r = 0.2 * i as f64;
            let v = f.value(&AlphaKey::new([(0, r), (1, 0.5 * r)]).unwrap()).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn admissible_caps() {
        let (_, data, geo) = setup(24, PotentialSpec::constant(1.0), 6);
        let a = AlphaKey::new([(0, 0.5)]).unwrap();
        let spec = AdmissibleSetSpec::new(&data, geo.cells(), a, 3.0, 0.1).unwrap();
        assert_eq!(spec.energy_cap(), 9.0);
        assert!((spec.wave_cap() - 0.01).abs() < 1e-15);
        assert_eq!(spec.ellipsoids().len(), 3);
        let empty = AdmissibleSetSpec::new(&data, geo.cells(), AlphaKey::empty(), 3.0, 0.1).unwrap();
        assert_eq!(empty.ellipsoids().len(), 2);
        assert!(AdmissibleSetSpec::new(&data, geo.cells(), AlphaKey::empty(), -1.0, 0.1).is_err());
    }

    #[test]
    fn empty_alpha_projects_onto_ball_and_energy() {
        let (_, data, geo) = setup(24, PotentialSpec::constant(1.0), 6);
        let spec = AdmissibleSetSpec::new(&data, geo.cells(), AlphaKey::empty(), 2.0, 0.1).unwrap();
        let mut u = vec![0.0; 6];
        u[0] = 1.0;
        let c = recover_cutoff(&spec, &u, 0.0, &QcqpOptions::default()).unwrap();
        // e₁ is admissible: λ₁ = 1 ≤ E² = 4
        assert!(norm(&c.b) < 1e-14);
    }

    #[test]
    fn full_influence_keeps_first_mode() {
        let (sol, data, geo) = setup(24, PotentialSpec::constant(1.0), 12);
        let big = AlphaKey::new([(0, 5.0), (1, 5.0)]).unwrap();
        let f = InfluenceFunctional::blind(geo.clone(), data, 2.0, 1e-3, 0.0, QcqpOptions::default());
        let rec = f.record(&big).unwrap();
        let b = rec.coefficients.as_ref().unwrap();
        assert!((b[0] - 1.0).abs() < 1e-2, "{b:?}");
        let oracle = InfluenceFunctional::oracle(geo, sol.mode(0)).unwrap();
        assert!((rec.value - oracle.value(&big).unwrap()).abs() < 2e-2);
    }

    #[test]
    fn memo_round_trip() {
        let (sol, _, geo) = setup(16, PotentialSpec::constant(1.0), 3);
        let f = InfluenceFunctional::oracle(geo.clone(), sol.mode(0)).unwrap();
        for r in [0.3, 0.6, 0.9] {
            f.value(&AlphaKey::new([(0, r)]).unwrap()).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memo.bin");
        let hash = [7u8; 32];
        f.save(&path, &hash).unwrap();
        let g = InfluenceFunctional::oracle(geo, sol.mode(0)).unwrap();
        assert_eq!(g.load(&path, &[0u8; 32]).unwrap(), 0);
        assert_eq!(g.load(&path, &hash).unwrap(), 3);
        assert_eq!(
            f.records().iter().map(|(k, r)| (k.clone(), r.value)).collect::<Vec<_>>(),
            g.records().iter().map(|(k, r)| (k.clone(), r.value)).collect::<Vec<_>>()
        );
    }
}
