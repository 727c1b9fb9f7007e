use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::DiscreteManifold;

/// One term `amp·cos(k·x + phase)` of a cosine mixture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CosineTerm {
    pub amp: f64,
    pub k: [i32; 2],
    pub phase: f64,
}

/// One term `amp·exp(−d(x, center)²/width²)` of a bump sum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bump {
    pub amp: f64,
    pub center: [f64; 2],
    pub width: f64,
}

/// Closed family of smooth potentials.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Constant { value: f64 },
    Cosine { base: f64, terms: Vec<CosineTerm> },
    Bumps { base: f64, bumps: Vec<Bump> },
}

impl PotentialSpec {
    pub fn constant(value: f64) -> Self {
        PotentialSpec::Constant { value }
    }

    /// `base + amp·cos(x₁)`
    pub fn cos_x1(base: f64, amp: f64) -> Self {
        PotentialSpec::Cosine {
            base,
            terms: vec![CosineTerm {
                amp,
                k: [1, 0],
                phase: 0.0,
            }],
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            PotentialSpec::Constant { value } => *value,
            PotentialSpec::Cosine { base, terms } => {
                base + terms
                    .iter()
                    .map(|t| t.amp * (t.k[0] as f64 * x[0] + t.k[1] as f64 * x[1] + t.phase).cos())
                    .sum::<f64>()
            }
            PotentialSpec::Bumps { base, bumps } => {
                base + bumps
                    .iter()
                    .map(|b| {
                        let d2: f64 = (0..2)
                            .map(|a| {
                                let mut d = (x[a] - b.center[a]).rem_euclid(2.0 * std::f64::consts::PI);
                                if d > std::f64::consts::PI {
                                    d -= 2.0 * std::f64::consts::PI;
                                }
                                d * d
                            })
                            .sum();
                        b.amp * (-d2 / (b.width * b.width)).exp()
                    })
                    .sum::<f64>()
            }
        }
    }
}

/// Potential sampled on the grid together with its declared bound C₀.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    values: Vec<f64>,
    c0: f64,
}

impl PotentialField {
    /// Samples `spec` on the grid and checks C₀⁻¹ ≤ q ≤ C₀ and the discrete
    /// Lipschitz seminorm ≤ C₀.
    pub fn sample(man: &DiscreteManifold, spec: &PotentialSpec, c0: f64) -> Result<Self> {
        let values = man.points().map(|x| spec.eval(man.coords(x))).collect();
        Self::new(man, values, c0)
    }

    pub fn new(man: &DiscreteManifold, values: Vec<f64>, c0: f64) -> Result<Self> {
        if values.len() != man.len() {
            return Err(Error::Potential(format!(
                "{} values for {} grid points",
                values.len(),
                man.len()
            )));
        }
        if !(c0 >= 1.0) {
            return Err(Error::Potential(format!("bound C0 = {c0} must be at least 1")));
        }
        for (i, &q) in values.iter().enumerate() {
            if !(q >= 1.0 / c0 && q <= c0) {
                return Err(Error::Potential(format!(
                    "q = {q} at grid point {i} outside [1/C0, C0] = [{}, {c0}]",
                    1.0 / c0
                )));
            }
        }
        let lip = lipschitz_seminorm(man, &values);
        if lip > c0 {
            return Err(Error::Potential(format!(
                "Lipschitz seminorm {lip} exceeds C0 = {c0}"
            )));
        }
        Ok(Self { values, c0 })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bound(&self) -> f64 {
        self.c0
    }
}

/// Largest difference quotient along grid edges.
pub fn lipschitz_seminorm(man: &DiscreteManifold, f: &[f64]) -> f64 {
    let h = man.spacing();
    let mut lip: f64 = 0.0;
    for x in man.points() {
        for axis in 0..man.dim() {
            let y = man.shift(x, axis, 1);
            lip = lip.max((f[y.0] - f[x.0]).abs() / h);
        }
    }
    lip
}
