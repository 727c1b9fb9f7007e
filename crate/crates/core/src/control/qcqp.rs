//! Euclidean projection onto an intersection of centred ellipsoids
//! {v : vᵀQv ≤ c}.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{dot, mul_cols, mul_transpose, norm, solve_small, Qr, SymMatrix};

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 200;
/// Dykstra sweeps before the dual Newton polish takes over.
const DYKSTRA_HANDOVER: usize = 50;
/// Newton steps without a better residual before giving up.
const NEWTON_PATIENCE: usize = 5;

#[derive(Debug)]
struct Spectral {
    matrix: SymMatrix,
    /// Ascending, clamped at 0.
    eigenvalues: Vec<f64>,
    /// Column-major eigenvectors.
    eigenvectors: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Shape {
    Ball,
    Diagonal(Arc<Vec<f64>>),
    Dense(Arc<Spectral>),
}

/// The set {v : vᵀQv ≤ cap}.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    shape: Shape,
    dim: usize,
    cap: f64,
}

/// Eigendecomposed quadratic form shared between ellipsoids with different
/// caps.
#[derive(Debug, Clone)]
pub struct QuadraticForm(Arc<Spectral>);

impl QuadraticForm {
    pub fn new(matrix: SymMatrix) -> Result<Self> {
        let (mut w, v) = matrix.eigen()?;
        let top = w.last().copied().unwrap_or(0.0).abs();
        if let Some(&min) = w.first() {
            if min < -1e-10 * top.max(1.0) {
                return Err(Error::Spectral(format!("quadratic form is indefinite (min eigenvalue {min})")));
            }
        }
        for x in &mut w {
            *x = x.max(0.0);
        }
        Ok(Self(Arc::new(Spectral {
            matrix,
            eigenvalues: w,
            eigenvectors: v,
        })))
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.0.matrix
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.0.eigenvalues
    }
}

impl Ellipsoid {
    /// {v : ‖v‖² ≤ cap}.
    pub fn ball(dim: usize, cap: f64) -> Self {
        Self {
            shape: Shape::Ball,
            dim,
            cap,
        }
    }

    /// {v : Σ dᵢvᵢ² ≤ cap} with dᵢ ≥ 0 (negative entries clamped).
    pub fn diagonal(d: &[f64], cap: f64) -> Self {
        Self {
            shape: Shape::Diagonal(Arc::new(d.iter().map(|x| x.max(0.0)).collect())),
            dim: d.len(),
            cap,
        }
    }

    pub fn dense(form: &QuadraticForm, cap: f64) -> Self {
        Self {
            dim: form.0.matrix.dim(),
            shape: Shape::Dense(form.0.clone()),
            cap,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        match &self.shape {
            Shape::Ball => dot(v, v),
            Shape::Diagonal(d) => d.iter().zip(v).map(|(d, x)| d * x * x).sum(),
            Shape::Dense(s) => {
                let t = mul_transpose(&s.eigenvectors, self.dim, v);
                s.eigenvalues.iter().zip(&t).map(|(l, x)| l * x * x).sum()
            }
        }
    }

    /// Q v.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match &self.shape {
            Shape::Ball => v.to_vec(),
            Shape::Diagonal(d) => d.iter().zip(v).map(|(d, x)| d * x).collect(),
            Shape::Dense(s) => s.matrix.mul_vec(v),
        }
    }

    /// Nearest point of the set and the multiplier μ with y = x + μQx.
    /// A zero cap projects onto the null space of Q and reports μ = ∞.
    pub fn project(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        match &self.shape {
            Shape::Ball => {
                let r2 = dot(y, y);
                if r2 <= self.cap {
                    return Ok((y.to_vec(), 0.0));
                }
                if self.cap <= 0.0 {
                    return Ok((vec![0.0; self.dim], f64::INFINITY));
                }
                let s = (self.cap / r2).sqrt();
                Ok((y.iter().map(|v| v * s).collect(), 1.0 / s - 1.0))
            }
            Shape::Diagonal(d) => secular_project(d, y, self.cap),
            Shape::Dense(s) => {
                let t = mul_transpose(&s.eigenvectors, self.dim, y);
                let (xt, mu) = secular_project(&s.eigenvalues, &t, self.cap)?;
                if mu == 0.0 {
                    return Ok((y.to_vec(), 0.0));
                }
                Ok((mul_cols(&s.eigenvectors, self.dim, &xt), mu))
            }
        }
    }
}

/// Projects `y` onto {Σ lᵢxᵢ² ≤ c} in a basis where the form is diagonal.
/// Newton on 1/√s(μ) − 1/√c, s(μ) = Σ lᵢyᵢ²/(1+μlᵢ)², which is concave and
/// increasing, safeguarded by a bracket.
fn secular_project(l: &[f64], y: &[f64], c: f64) -> Result<(Vec<f64>, f64)> {
    let s = |mu: f64| -> (f64, f64) {
        let mut v = 0.0;
        let mut dv = 0.0;
        for (&li, &yi) in l.iter().zip(y) {
            let d = 1.0 + mu * li;
            let t = li * yi * yi / (d * d);
            v += t;
            dv -= 2.0 * t * li / d;
        }
        (v, dv)
    };
    let (s0, _) = s(0.0);
    if s0 <= c {
        return Ok((y.to_vec(), 0.0));
    }
    if c <= 0.0 {
        let top = l.iter().cloned().fold(0.0, f64::max);
        let x = l
            .iter()
            .zip(y)
            .map(|(&li, &yi)| if li > 1e-14 * top { 0.0 } else { yi })
            .collect();
        return Ok((x, f64::INFINITY));
    }
    let target = 1.0 / c.sqrt();
    let mut lo = 0.0;
    let mut hi = dot(y, y) / (4.0 * c);
    let mut mu = 0.0;
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        let (v, dv) = s(mu);
        if (v - c).abs() <= NEWTON_TOL * c {
            converged = true;
            break;
        }
        if v > c {
            lo = mu;
        } else {
            hi = mu;
        }
        let phi = 1.0 / v.sqrt() - target;
        let dphi = -0.5 * dv / (v * v.sqrt());
        let mut next = mu - phi / dphi;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        }
        if (next - mu).abs() <= 4.0 * f64::EPSILON * mu {
            converged = true;
            break;
        }
        mu = next;
    }
    if !converged {
        return Err(Error::Spectral(format!("ellipsoid projection did not converge (μ = {mu})")));
    }
    Ok((l.iter().zip(y).map(|(&li, &yi)| yi / (1.0 + mu * li)).collect(), mu))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcqpOptions {
    /// Target KKT residual.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub max_newton: usize,
}

impl Default for QcqpOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_sweeps: 5000,
            max_newton: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpSolution {
    pub x: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    pub sweeps: usize,
    pub newton_steps: usize,
}

/// Fixed-point form of the KKT conditions: with normal vectors pᵢ
/// (pᵢ = μᵢQᵢx at a solution), the largest of ‖u − x − Σpᵢ‖ and
/// ‖x − Pᵢ(x + pᵢ)‖ over the sets, relative to max(1, ‖u‖). It vanishes
/// exactly when x is the projection of u and avoids forming μᵢQᵢx for the
/// huge multipliers that tiny caps produce.
pub fn kkt_residual(u: &[f64], x: &[f64], sets: &[Ellipsoid], normals: &[Vec<f64>]) -> Result<f64> {
    let scale = norm(u).max(1.0);
    let mut r: Vec<f64> = u.iter().zip(x).map(|(a, b)| a - b).collect();
    let mut worst: f64 = 0.0;
    for (e, p) in sets.iter().zip(normals) {
        for (ri, pi) in r.iter_mut().zip(p) {
            *ri -= pi;
        }
        let y: Vec<f64> = x.iter().zip(p).map(|(a, b)| a + b).collect();
        let (z, _) = e.project(&y)?;
        worst = worst.max(norm(&z.iter().zip(x).map(|(a, b)| a - b).collect::<Vec<_>>()));
    }
    Ok(worst.max(norm(&r)) / scale)
}

/// KKT residual at a Lagrangian minimizer x = (I + ΣμᵢQᵢ)⁻¹u, where
/// stationarity holds by construction: the larger of the distance to each
/// set and the complementarity μᵢ|xᵀQᵢx − cᵢ|, relative to max(1, ‖u‖).
fn dual_residual(u: &[f64], x: &[f64], sets: &[Ellipsoid], mu: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (e, &m) in sets.iter().zip(mu) {
        let (p, _) = e.project(x)?;
        worst = worst.max(norm(&p.iter().zip(x).map(|(a, b)| a - b).collect::<Vec<_>>()));
        if m > 0.0 {
            worst = worst.max(m * (e.value(x) - e.cap).abs());
        }
    }
    Ok(worst / norm(u).max(1.0))
}

/// Dykstra's alternating projections followed, when needed, by projected
/// Newton on the dual.
pub fn project_onto_intersection(u: &[f64], sets: &[Ellipsoid], opts: &QcqpOptions) -> Result<QcqpSolution> {
    let n = u.len();
    if sets.iter().any(|e| e.dim != n) {
        return Err(Error::Config("ellipsoid dimension mismatch".into()));
    }
    if let Some(e) = sets.iter().find(|e| !(e.cap >= 0.0)) {
        return Err(Error::Config(format!("negative cap {}", e.cap)));
    }
    if sets.iter().all(|e| e.value(u) <= e.cap) {
        return Ok(QcqpSolution {
            x: u.to_vec(),
            multipliers: vec![0.0; sets.len()],
            kkt_residual: 0.0,
            sweeps: 0,
            newton_steps: 0,
        });
    }
    let mut x = u.to_vec();
    let mut incr = vec![vec![0.0; n]; sets.len()];
    let mut raw_mu = vec![0.0; sets.len()];
    let mut best: Option<QcqpSolution> = None;
    let mut sweeps = 0;
    let check_every = if sets.len() == 1 { 1 } else { 10 };
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        for (i, e) in sets.iter().enumerate() {
            let y: Vec<f64> = x.iter().zip(&incr[i]).map(|(a, b)| a + b).collect();
            let (p, mu) = e.project(&y)?;
            incr[i] = y.iter().zip(&p).map(|(a, b)| a - b).collect();
            raw_mu[i] = mu;
            x = p;
        }
        if sweeps % check_every == 0 {
            let res = kkt_residual(u, &x, sets, &incr)?;
            if best.as_ref().is_none_or(|b| res < b.kkt_residual) {
                best = Some(QcqpSolution {
                    x: x.clone(),
                    multipliers: raw_mu.clone(),
                    kkt_residual: res,
                    sweeps,
                    newton_steps: 0,
                });
            }
            if res <= opts.tolerance {
                break;
            }
            // hand over to Newton once Dykstra has settled the active set
            if sweeps >= DYKSTRA_HANDOVER && sets.iter().all(|e| e.cap > 0.0) {
                break;
            }
        }
    }
    let mut best = best.expect("at least one check");
    if best.kkt_residual > opts.tolerance && sets.iter().all(|e| e.cap > 0.0) {
        if let Some(polished) = dual_newton(u, sets, &best.multipliers, opts)? {
            if polished.kkt_residual < best.kkt_residual {
                best = QcqpSolution { sweeps, ..polished };
            }
        }
    }
    if best.kkt_residual > opts.tolerance {
        return Err(Error::MinimizerStalled {
            iterations: best.sweeps + best.newton_steps,
            residual: best.kkt_residual,
            best: best.x,
        });
    }
    Ok(best)
}

struct DualPoint {
    x: Vec<f64>,
    qr: Qr,
    value: f64,
}

/// x(μ) = (I + ΣμᵢQᵢ)⁻¹u as the weighted least-squares problem
/// min ‖x − u‖² + Σμᵢ‖Rᵢx‖² (Qᵢ = RᵢᵀRᵢ), solved by QR with rows sorted by
/// decreasing norm so that huge multipliers stay well conditioned.
fn dual_point(u: &[f64], sets: &[Ellipsoid], mu: &[f64]) -> Result<DualPoint> {
    let n = u.len();
    let mut diag = vec![1.0; n];
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (e, &w) in sets.iter().zip(mu) {
        if w <= 0.0 {
            continue;
        }
        match &e.shape {
            Shape::Ball => diag.iter_mut().for_each(|d| *d += w),
            Shape::Diagonal(q) => diag.iter_mut().zip(q.iter()).for_each(|(d, q)| *d += w * q),
            Shape::Dense(s) => {
                for (k, &l) in s.eigenvalues.iter().enumerate() {
                    let scale = (w * l).sqrt();
                    if scale > 1e-15 {
                        rows.push(s.eigenvectors[k * n..(k + 1) * n].iter().map(|v| v * scale).collect());
                    }
                }
            }
        }
    }
    let mut rhs = vec![0.0; rows.len()];
    for (i, &d) in diag.iter().enumerate() {
        let mut r = vec![0.0; n];
        r[i] = d.sqrt();
        rows.push(r);
        rhs.push(u[i] / d.sqrt());
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let norms: Vec<f64> = rows.iter().map(|r| norm(r)).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let m = rows.len();
    let mut a = vec![0.0; m * n];
    let mut b = vec![0.0; m];
    for (pos, &i) in order.iter().enumerate() {
        for c in 0..n {
            a[c * m + pos] = rows[i][c];
        }
        b[pos] = rhs[i];
    }
    let qr = Qr::new(a, m, n)?;
    let x = qr.least_squares(&b)?;
    let d: f64 = x.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
    let value = 0.5 * d + 0.5 * sets.iter().zip(mu).map(|(e, &w)| w * (e.value(&x) - e.cap)).sum::<f64>();
    Ok(DualPoint { x, qr, value })
}

/// Maximizes the concave dual g(μ) = min_x ½‖x−u‖² + ½Σμᵢ(xᵀQᵢx − cᵢ)
/// over μ ≥ 0.
fn dual_newton(u: &[f64], sets: &[Ellipsoid], start: &[f64], opts: &QcqpOptions) -> Result<Option<QcqpSolution>> {
    let n = u.len();
    let k = sets.len();
    let mut mu: Vec<f64> = start.iter().map(|m| m.max(0.0)).collect();
    let mut cur = dual_point(u, sets, &mu)?;
    let mut best: Option<QcqpSolution> = None;
    let mut since_best = 0;
    for step in 0..=opts.max_newton {
        let res = dual_residual(u, &cur.x, sets, &mu)?;
        since_best += 1;
        if best.as_ref().is_none_or(|b| res < b.kkt_residual) {
            since_best = 0;
            best = Some(QcqpSolution {
                x: cur.x.clone(),
                multipliers: mu.clone(),
                kkt_residual: res,
                sweeps: 0,
                newton_steps: step,
            });
        }
        if res <= opts.tolerance || step == opts.max_newton || since_best > NEWTON_PATIENCE {
            break;
        }
        let grad: Vec<f64> = sets.iter().map(|e| 0.5 * (e.value(&cur.x) - e.cap)).collect();
        let free: Vec<usize> = (0..k).filter(|&i| mu[i] > 0.0 || grad[i] > 0.0).collect();
        if free.is_empty() {
            break;
        }
        // H_ij = −(Qᵢx)ᵀ M⁻¹ (Qⱼx)
        let qx: Vec<Vec<f64>> = free.iter().map(|&i| sets[i].apply(&cur.x)).collect();
        // M = RᵀR, so H_ij = −wᵢ·wⱼ with wᵢ = R⁻ᵀQᵢx
        let mut w: Vec<f64> = qx.iter().flatten().copied().collect();
        cur.qr.triangular_solve(&mut w, free.len(), true)?;
        let h: Vec<Vec<f64>> = (0..free.len())
            .map(|a| {
                (0..free.len())
                    .map(|b| dot(&w[a * n..(a + 1) * n], &w[b * n..(b + 1) * n]))
                    .collect()
            })
            .collect();
        let g: Vec<f64> = free.iter().map(|&i| grad[i]).collect();
        let Some(dir) = solve_small(h, g) else {
            break;
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let mut trial = mu.clone();
            for (&i, d) in free.iter().zip(&dir) {
                trial[i] = (mu[i] + t * d).max(0.0);
            }
            if let Ok(p) = dual_point(u, sets, &trial) {
                if p.value >= cur.value {
                    mu = trial;
                    cur = p;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasible_point_is_fixed() {
        let sets = [Ellipsoid::ball(2, 1.0), Ellipsoid::diagonal(&[2.0, 1.0], 1.0)];
        let s = project_onto_intersection(&[0.3, -0.2], &sets, &QcqpOptions::default()).unwrap();
        assert_eq!(s.x, vec![0.3, -0.2]);
    }

    #[test]
    fn ball_projection() {
        let sets = [Ellipsoid::ball(3, 1.0)];
        let s = project_onto_intersection(&[2.0, 0.0, 0.0], &sets, &QcqpOptions::default()).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && s.x[1] == 0.0 && s.x[2] == 0.0);
        assert!((s.multipliers[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ellipse_projection_matches_lagrange_root() {
        // 2v₁² + v₂² ≤ 1 from (2, 0): v₁ = 2/(1+2μ) on the boundary.
        let mut mu = 0.0f64;
        for _ in 0..100 {
            let v1 = 2.0 / (1.0 + 2.0 * mu);
            let f = 2.0 * v1 * v1 - 1.0;
            let df = -16.0 * v1 * v1 / (1.0 + 2.0 * mu);
            mu -= f / df;
        }
        let oracle = 2.0 / (1.0 + 2.0 * mu);
        assert!((oracle - 0.5f64.sqrt()).abs() < 1e-12);
        let form = QuadraticForm::new(SymMatrix::from_diagonal(&[2.0, 1.0])).unwrap();
        for e in [Ellipsoid::diagonal(&[2.0, 1.0], 1.0), Ellipsoid::dense(&form, 1.0)] {
            let s = project_onto_intersection(&[2.0, 0.0], &[e], &QcqpOptions::default()).unwrap();
            assert!((s.x[0] - oracle).abs() < 1e-10 && s.x[1].abs() < 1e-12, "{:?}", s.x);
        }
    }

    #[test]
    fn zero_cap_projects_to_null_space() {
        let e = Ellipsoid::diagonal(&[1.0, 0.0, 3.0], 0.0);
        let (x, mu) = e.project(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![0.0, 2.0, 0.0]);
        assert!(mu.is_infinite());
        let s = project_onto_intersection(&[1.0, 2.0, 3.0], &[Ellipsoid::ball(3, 1.0), e], &QcqpOptions::default())
            .unwrap();
        assert!((s.x[1] - 1.0).abs() < 1e-9 && s.x[0].abs() < 1e-9 && s.x[2].abs() < 1e-9);
    }

    #[test]
    fn projection_newton_reaches_tiny_caps() {
        let d: Vec<f64> = (0..20).map(|i| 10f64.powi(-i / 2)).collect();
        let y: Vec<f64> = (0..20).map(|i| 1.0 / (1.0 + i as f64)).collect();
        for cap in [1.0, 1e-6, 1e-14] {
            let e = Ellipsoid::diagonal(&d, cap);
            let (x, mu) = e.project(&y).unwrap();
            assert!((e.value(&x) - cap).abs() <= 1e-11 * cap, "{cap}");
            for i in 0..20 {
                assert!((y[i] - x[i] - mu * d[i] * x[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bad_inputs() {
        let o = QcqpOptions::default();
        assert!(project_onto_intersection(&[1.0], &[Ellipsoid::ball(2, 1.0)], &o).is_err());
        assert!(project_onto_intersection(&[1.0], &[Ellipsoid::ball(1, -1.0)], &o).is_err());
    }

    fn random_form(rng: &mut rand_chacha::ChaCha8Rng, n: usize, rank: usize) -> QuadraticForm {
        use rand::Rng;
        let mut a = vec![0.0; n * n];
        for _ in 0..rank {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for r in 0..n {
                for c in 0..n {
                    a[c * n + r] += v[r] * v[c];
                }
            }
        }
        QuadraticForm::new(SymMatrix::from_col_major(n, a).unwrap()).unwrap()
    }

    #[test]
    fn random_feasible_points_never_beat_minimizer() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 8;
        for trial in 0..10 {
            let d: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
            let f1 = random_form(&mut rng, n, 3);
            let f2 = random_form(&mut rng, n, 5);
            let sets = vec![
                Ellipsoid::ball(n, 1.0),
                Ellipsoid::diagonal(&d, 6.0),
                Ellipsoid::dense(&f1, 0.05),
                Ellipsoid::dense(&f2, 1e-3),
            ];
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s = project_onto_intersection(&u, &sets, &QcqpOptions::default()).unwrap();
            for e in &sets {
                let (p, _) = e.project(&s.x).unwrap();
                let dist = norm(&p.iter().zip(&s.x).map(|(a, b)| a - b).collect::<Vec<_>>());
                assert!(dist < 1e-8 * norm(&u).max(1.0));
            }
            let obj = |v: &[f64]| v.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = obj(&s.x);
            for _ in 0..100 {
                let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let ratio = sets.iter().map(|e| e.value(&v) / e.cap).fold(0.0, f64::max);
                if ratio > 1.0 {
                    let sc = rng.random_range(0.0..1.0) / ratio.sqrt();
                    v.iter_mut().for_each(|x| *x *= sc);
                }
                assert!(obj(&v) >= best - 1e-8, "trial {trial}");
                // points near the optimum along feasible chords
                let t = rng.random_range(0.0..1e-3);
                let w: Vec<f64> = s.x.iter().zip(&v).map(|(a, b)| a + t * (b - a)).collect();
                assert!(obj(&w) >= best - 1e-8, "trial {trial}");
            }
        }
    }
}
