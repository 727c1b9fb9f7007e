use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::slicing::SmallnessPolicy;
use crate::spectra::{Bump, CosineTerm, PotentialSpec};

/// Where 𝓛ᵃ values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Exact grid integrals of the forward eigenfunction (σ = 0).
    #[default]
    Oracle,
    /// Admissible-set minimization on the interior data only.
    Blind,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Mode::Oracle),
            "blind" => Ok(Mode::Blind),
            _ => Err(Error::Config(format!("mode must be oracle or blind, got {s:?}"))),
        }
    }
}

/// One reconstruction run. Optional numeric fields fall back to derived
/// defaults, see the accessor methods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub n: usize,
    pub m: usize,
    pub potential: PotentialSpec,
    /// Declared bound C₀ on q.
    pub c0: f64,
    /// Coordinates of the base point p.
    pub base: Vec<f64>,
    pub r0: f64,
    pub eps: f64,
    pub delta: f64,
    pub seed: u64,
    /// J.
    pub modes: usize,
    /// E.
    pub energy: Option<f64>,
    /// ε₁.
    pub eps1: Option<f64>,
    pub r_l: Option<f64>,
    /// Radius of U around p.
    pub u_radius: Option<f64>,
    pub mode: Mode,
    pub smallness: SmallnessPolicy,
    /// Local-edge radius R of the metric graph.
    pub metric_radius: Option<f64>,
    /// Cap on distinct 𝓛ᵃ evaluations while building a blind catalog.
    pub budget: usize,
    /// Seeded orthogonal rotation inside eigenvalue clusters.
    pub rotation: Option<u64>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n: 2,
            m: 64,
            potential: PotentialSpec::constant(1.0),
            c0: 2.0,
            base: vec![PI, PI],
            r0: 0.6,
            eps: 0.3,
            delta: 0.0,
            seed: 0,
            modes: 200,
            energy: None,
            eps1: None,
            r_l: None,
            u_radius: None,
            mode: Mode::Oracle,
            smallness: SmallnessPolicy::Relaxed,
            metric_radius: None,
            budget: 2000,
            rotation: None,
            out: None,
        }
    }
}

const KEYS: &[&str] = &[
    "n",
    "m",
    "potential",
    "potential.value",
    "potential.base",
    "potential.terms",
    "potential.bumps",
    "c0",
    "base",
    "r0",
    "eps",
    "delta",
    "seed",
    "modes",
    "energy",
    "eps1",
    "r_l",
    "u_radius",
    "mode",
    "smallness",
    "metric.radius",
    "budget",
    "rotation",
    "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split([',', ' '])
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// `amp k1 k2 phase; …`
fn parse_terms(value: &str) -> Result<Vec<CosineTerm>> {
    value
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|t| {
            let f: Vec<&str> = t.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::Config(format!("potential.terms: expected 'amp k1 k2 phase', got {t:?}")));
            }
            Ok(CosineTerm {
                amp: parse("potential.terms", f[0])?,
                k: [parse("potential.terms", f[1])?, parse("potential.terms", f[2])?],
                phase: parse("potential.terms", f[3])?,
            })
        })
        .collect()
}

/// `amp c1 c2 width; …`
fn parse_bumps(value: &str) -> Result<Vec<Bump>> {
    value
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|t| {
            let f: Vec<&str> = t.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::Config(format!("potential.bumps: expected 'amp c1 c2 width', got {t:?}")));
            }
            Ok(Bump {
                amp: parse("potential.bumps", f[0])?,
                center: [parse("potential.bumps", f[1])?, parse("potential.bumps", f[2])?],
                width: parse("potential.bumps", f[3])?,
            })
        })
        .collect()
}

impl Scenario {
    /// Parses flat `key = value` text. `#` starts a comment; unknown and
    /// repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Scenario::default();
        let mut seen = BTreeSet::new();
        let mut kind = None;
        let (mut value, mut pbase, mut terms, mut bumps) = (None, None, None, None);
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let (key, val) = (key.trim(), val.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", no + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: repeated key {key:?}", no + 1)));
            }
            match key {
                "n" => s.n = parse(key, val)?,
                "m" => s.m = parse(key, val)?,
                "potential" => kind = Some(val.to_string()),
                "potential.value" => value = Some(parse::<f64>(key, val)?),
                "potential.base" => pbase = Some(parse::<f64>(key, val)?),
                "potential.terms" => terms = Some(parse_terms(val)?),
                "potential.bumps" => bumps = Some(parse_bumps(val)?),
                "c0" => s.c0 = parse(key, val)?,
                "base" => s.base = parse_list(key, val)?,
                "r0" => s.r0 = parse(key, val)?,
                "eps" => s.eps = parse(key, val)?,
                "delta" => s.delta = parse(key, val)?,
                "seed" => s.seed = parse(key, val)?,
                "modes" => s.modes = parse(key, val)?,
                "energy" => s.energy = parse_auto(key, val)?,
                "eps1" => s.eps1 = parse_auto(key, val)?,
                "r_l" => s.r_l = parse_auto(key, val)?,
                "u_radius" => s.u_radius = parse_auto(key, val)?,
                "mode" => s.mode = val.parse()?,
                "smallness" => {
                    s.smallness = match val {
                        "strict" => SmallnessPolicy::Strict,
                        "relaxed" => SmallnessPolicy::Relaxed,
                        _ => return Err(Error::Config(format!("smallness must be strict or relaxed, got {val:?}"))),
                    }
                }
                "metric.radius" => s.metric_radius = parse_auto(key, val)?,
                "budget" => s.budget = parse(key, val)?,
                "rotation" => s.rotation = parse_auto(key, val)?,
                "out" => s.out = Some(PathBuf::from(val)),
                _ => unreachable!("key list and match arms agree"),
            }
        }
        let stray = |k: &str, ok: bool| -> Result<()> {
            if seen.contains(k) && !ok {
                Err(Error::Config(format!("{k} does not apply to this potential kind")))
            } else {
                Ok(())
            }
        };
        let kind = kind.unwrap_or_else(|| "constant".into());
        stray("potential.value", kind == "constant")?;
        stray("potential.base", kind != "constant")?;
        stray("potential.terms", kind == "cosine")?;
        stray("potential.bumps", kind == "bumps")?;
        s.potential = match kind.as_str() {
            "constant" => PotentialSpec::constant(value.unwrap_or(1.0)),
            "cosine" => PotentialSpec::Cosine {
                base: pbase.unwrap_or(1.0),
                terms: terms.unwrap_or_default(),
            },
            "bumps" => PotentialSpec::Bumps {
                base: pbase.unwrap_or(1.0),
                bumps: bumps.unwrap_or_default(),
            },
            _ => return Err(Error::Config(format!("unknown potential kind {kind:?}"))),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("scenario {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(1..=2).contains(&self.n) {
            return bad(format!("n = {} must be 1 or 2", self.n));
        }
        if self.base.len() != self.n {
            return bad(format!("base has {} coordinates for n = {}", self.base.len(), self.n));
        }
        if self.modes == 0 {
            return bad("modes must be positive".into());
        }
        if !(self.delta >= 0.0) {
            return bad(format!("delta = {} must be nonnegative", self.delta));
        }
        if !(self.r0 > 0.0 && self.eps > 0.0) {
            return bad(format!("r0 = {} and eps = {} must be positive", self.r0, self.eps));
        }
        for (name, v) in [
            ("energy", self.energy),
            ("eps1", self.eps1),
            ("r_l", self.r_l),
            ("metric.radius", self.metric_radius),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    return bad(format!("{name} = {v} must be nonnegative"));
                }
            }
        }
        let near = 2.0 * self.r0 + self.near_radius();
        if self.u_radius() < near {
            return bad(format!(
                "U radius {} does not contain B(p, 2r0 + eps^(1/4)) = {near}",
                self.u_radius()
            ));
        }
        Ok(())
    }

    pub fn u_radius(&self) -> f64 {
        self.u_radius.unwrap_or(5.0 * self.r0)
    }

    /// r_L, by default r₀/2.
    pub fn r_l(&self) -> f64 {
        self.r_l.unwrap_or(self.r0 / 2.0)
    }

    /// ρ = ε^{1/4}.
    pub fn near_radius(&self) -> f64 {
        self.eps.powf(0.25)
    }

    /// σ = 2^{−L}ε^{4L}.
    pub fn sigma(&self, anchors: usize) -> f64 {
        match self.mode {
            Mode::Oracle => 0.0,
            Mode::Blind => 2f64.powi(-(anchors as i32)) * self.eps.powi(4 * anchors as i32),
        }
    }

    /// E, by default 2(C₀λ₁)^{1/2}.
    pub fn energy(&self, lambda1: f64) -> f64 {
        self.energy.unwrap_or_else(|| 2.0 * (self.c0 * lambda1.max(0.0)).sqrt())
    }

    /// ε₁, by default σ/10.
    pub fn eps1(&self, sigma: f64) -> f64 {
        self.eps1.unwrap_or(sigma / 10.0)
    }

    /// Canonical JSON of every field except the output directory.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn hash(&self) -> Result<[u8; 32]> {
        Ok(Sha256::digest(self.to_json()?.as_bytes()).into())
    }

    pub fn hash_hex(&self) -> Result<String> {
        let mut s = String::with_capacity(64);
        for b in self.hash()? {
            write!(s, "{b:02x}").expect("writing to a string");
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let s = Scenario::parse("# nothing\n\n").unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(s.u_radius(), 3.0);
        assert_eq!(s.r_l(), 0.3);
        assert_eq!(s.sigma(4), 0.0);
    }

    #[test]
    fn full_scenario() {
        let text = "
            m = 48
            potential = cosine
            potential.base = 1.0
            potential.terms = 0.3 1 0 0.0; 0.1 0 2 0.5
            base = 1.0, 2.0
            eps = 0.2     # finer slices
            mode = blind
            energy = auto
            metric.radius = 0.9
            rotation = 7
        ";
        let s = Scenario::parse(text).unwrap();
        assert_eq!(s.m, 48);
        assert_eq!(s.base, vec![1.0, 2.0]);
        assert_eq!(s.mode, Mode::Blind);
        assert_eq!(s.metric_radius, Some(0.9));
        assert_eq!(s.rotation, Some(7));
        match &s.potential {
            PotentialSpec::Cosine { terms, .. } => {
                assert_eq!(terms.len(), 2);
                assert_eq!(terms[1].k, [0, 2]);
            }
            other => panic!("{other:?}"),
        }
        assert!((s.sigma(2) - 0.25 * 0.2f64.powi(8)).abs() < 1e-20);
        assert_eq!(s.energy(2.0), 4.0);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "colour = red",
            "eps = 0.3\neps = 0.2",
            "eps = fast",
            "mode = psychic",
            "potential = constant\npotential.terms = 1 1 0 0",
            "delta = -1",
            "base = 1.0",
            "u_radius = 1.0",
            "just words",
        ] {
            let e = Scenario::parse(text).unwrap_err();
            assert!(e.is_config(), "{text}: {e}");
        }
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = Scenario::parse("eps = 0.2").unwrap();
        let b = Scenario::parse("eps = 0.2\nout = /tmp/x").unwrap();
        let c = Scenario::parse("eps = 0.25").unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash_hex().unwrap().len(), 64);
    }
}
