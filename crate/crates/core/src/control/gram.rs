use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;

use crate::error::{Error, Result};
use crate::geometry::GridPoint;
use crate::linalg::SymMatrix;
use crate::spectra::SpectralData;

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

/// √λⱼᵃ with negative perturbed eigenvalues clamped to 0.
pub fn wave_speeds(data: &SpectralData) -> Vec<f64> {
    data.eigenvalues()
        .iter()
        .map(|&l| {
            if l < 0.0 {
                if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
                    warn!("negative eigenvalue {l} clamped to 0 in wave evaluation");
                }
                0.0
            } else {
                l.sqrt()
            }
        })
        .collect()
}

/// W(v)(x, t) = Σⱼ vⱼ cos(√λⱼ t) φⱼ(x) for x in U.
pub fn wave_eval(data: &SpectralData, v: &[f64], x: GridPoint, t: f64) -> Result<f64> {
    let i = data
        .u_index(x)
        .ok_or_else(|| Error::Spectral(format!("grid point {} is not in U", x.0)))?;
    let speeds = wave_speeds(data);
    Ok(v.iter()
        .zip(&speeds)
        .enumerate()
        .map(|(j, (&vj, &s))| vj * (s * t).cos() * data.values(j)[i])
        .sum())
}

/// ∫_{−α}^{α} cos(ct)/2 dt = sin(cα)/c, with the α-limit at c → 0.
#[inline]
fn half_cos_integral(c: f64, alpha: f64) -> f64 {
    let z = c * alpha;
    if z.abs() < 1e-4 {
        let z2 = z * z;
        alpha * (1.0 - z2 / 6.0 + z2 * z2 / 120.0)
    } else {
        z.sin() / c
    }
}

/// Gram matrix of v ↦ ‖Σ vⱼ cos(√λⱼt) φⱼ‖²_{H¹(cell × [−α, α])} with time
/// integrals in closed form and a midpoint sum in space.
pub fn assemble_gram(data: &SpectralData, cell: &[GridPoint], alpha: f64) -> Result<SymMatrix> {
    if !(alpha >= 0.0) {
        return Err(Error::NegativeRadius(alpha));
    }
    let j = data.mode_count();
    let n = data.dim();
    let w = data.manifold().weight();
    let idx: Vec<usize> = cell
        .iter()
        .map(|&x| {
            data.u_index(x)
                .ok_or_else(|| Error::Spectral(format!("cell point {} outside U", x.0)))
        })
        .collect::<Result<_>>()?;
    if alpha == 0.0 {
        return Ok(SymMatrix::zeros(j));
    }
    // per-mode samples on the cell: values and gradients
    let vals: Vec<Vec<f64>> = (0..j)
        .map(|m| idx.iter().map(|&i| data.values(m)[i]).collect())
        .collect();
    let grads: Vec<Vec<f64>> = (0..j)
        .map(|m| {
            idx.iter()
                .flat_map(|&i| data.gradients(m)[i * n..(i + 1) * n].iter().copied())
                .collect()
        })
        .collect();
    let s = wave_speeds(data);
    let mut a = vec![0.0; j * j];
    for r in 0..j {
        for c in r..j {
            let p: f64 = vals[r].iter().zip(&vals[c]).map(|(x, y)| x * y).sum::<f64>() * w;
            let g: f64 = grads[r].iter().zip(&grads[c]).map(|(x, y)| x * y).sum::<f64>() * w;
            let minus = half_cos_integral(s[r] - s[c], alpha);
            let plus = half_cos_integral(s[r] + s[c], alpha);
            let v = (p + g) * (minus + plus) + s[r] * s[c] * p * (minus - plus);
            a[c * j + r] = v;
            a[r * j + c] = v;
        }
    }
    SymMatrix::from_col_major(j, a)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::geometry::DiscreteManifold;
    use crate::spectra::{solve_forward, PotentialField, PotentialSpec};

    fn data(m: usize, spec: PotentialSpec, j: usize) -> SpectralData {
        let man = DiscreteManifold::flat_torus(2, m).unwrap();
        let q = PotentialField::sample(&man, &spec, 2.0).unwrap();
        let sol = solve_forward(&man, &q, j).unwrap();
        sol.restrict(&man.ball_points(man.point_at(&[PI, PI]), 1.5))
    }

    #[test]
    fn wave_of_constant_mode() {
        let d = data(16, PotentialSpec::constant(1.0), 3);
        let x = d.u_points()[4];
        for t in [0.0, 0.7, 2.0] {
            let w = wave_eval(&d, &[1.0, 0.0, 0.0], x, t).unwrap();
            assert!((w - t.cos() / (2.0 * PI)).abs() < 1e-12);
        }
        let v = [0.3, -0.2, 0.5];
        let w0 = wave_eval(&d, &v, x, 0.0).unwrap();
        let i = d.u_index(x).unwrap();
        let direct: f64 = (0..3).map(|j| v[j] * d.values(j)[i]).sum();
        assert!((w0 - direct).abs() < 1e-14);
        assert_eq!(wave_eval(&d, &[0.0; 3], x, 1.3).unwrap(), 0.0);
    }

    #[test]
    fn single_constant_mode_gram() {
        let d = data(16, PotentialSpec::constant(1.0), 1);
        let cell: Vec<GridPoint> = d.u_points()[..5].to_vec();
        let vol = 5.0 * d.manifold().weight();
        let alpha = 0.8;
        let a = assemble_gram(&d, &cell, alpha).unwrap();
        assert!((a.get(0, 0) - vol / (4.0 * PI * PI) * 2.0 * alpha).abs() < 1e-13);
        assert_eq!(assemble_gram(&d, &cell, 0.0).unwrap(), SymMatrix::zeros(1));
        assert!(assemble_gram(&d, &cell, -0.1).is_err());
    }

    /// Trapezoid rule in time on the defining integrand.
    fn trapezoid_gram(d: &SpectralData, cell: &[GridPoint], alpha: f64, steps: usize) -> Vec<f64> {
        let j = d.mode_count();
        let n = d.dim();
        let w = d.manifold().weight();
        let s = wave_speeds(d);
        let dt = 2.0 * alpha / steps as f64;
        let mut out = vec![0.0; j * j];
        for k in 0..=steps {
            let t = -alpha + k as f64 * dt;
            let wt = if k == 0 || k == steps { 0.5 * dt } else { dt };
            for &x in cell {
                let i = d.u_index(x).unwrap();
                for r in 0..j {
                    for c in 0..j {
                        let (cr, cc) = ((s[r] * t).cos(), (s[c] * t).cos());
                        let (sr, sc) = ((s[r] * t).sin(), (s[c] * t).sin());
                        let pv = d.values(r)[i] * d.values(c)[i];
                        let gv: f64 = (0..n)
                            .map(|a| d.gradients(r)[i * n + a] * d.gradients(c)[i * n + a])
                            .sum();
                        out[c * j + r] += wt * w * ((pv + gv) * cr * cc + s[r] * s[c] * pv * sr * sc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn closed_form_matches_time_quadrature() {
        let d = data(32, PotentialSpec::cos_x1(1.0, 0.3), 2);
        let cell: Vec<GridPoint> = d.u_points()[100..112].to_vec();
        for alpha in [0.3, 1.0, 2.5] {
            let a = assemble_gram(&d, &cell, alpha).unwrap();
            let t = trapezoid_gram(&d, &cell, alpha, 10_000);
            for (x, y) in a.as_slice().iter().zip(&t) {
                assert!((x - y).abs() < 1e-6, "{alpha}: {x} vs {y}");
            }
            assert!(a.min_eigenvalue().unwrap() > -1e-10);
        }
    }
}
