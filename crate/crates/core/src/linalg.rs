//! Thin wrappers over the LAPACK routines the crate needs, plus a few dense
//! kernels. Matrices are column-major `Vec<f64>`.

use std::os::raw::c_char;

use crate::error::{Error, Result};

/// Dense symmetric matrix stored column-major (both triangles populated).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    /// Builds from a column-major buffer. Fails when the buffer is not exactly
    /// symmetric.
    pub fn from_col_major(n: usize, data: Vec<f64>) -> Result<Self> {
        assert_eq!(data.len(), n * n, "buffer size mismatch");
        for c in 0..n {
            for r in (c + 1)..n {
                if data[c * n + r] != data[r * n + c] {
                    return Err(Error::NonSymmetric { row: r, col: c });
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.n + r]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for (c, &xc) in x.iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            let col = &self.data[c * n..(c + 1) * n];
            for (yr, &a) in y.iter_mut().zip(col) {
                *yr += a * xc;
            }
        }
        y
    }

    /// `xᵀ A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    /// Smallest eigenvalue, for PSD checks.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (w, _) = sym_eigen_all(self.data.clone(), self.n, false)?;
        Ok(w.first().copied().unwrap_or(0.0))
    }

    /// Full eigendecomposition; eigenvalues ascending, eigenvectors
    /// column-major.
    pub fn eigen(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        sym_eigen_all(self.data.clone(), self.n, true)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `Rᵀ y` for column-major `r` (n×k).
pub fn mul_transpose(r: &[f64], n: usize, y: &[f64]) -> Vec<f64> {
    r.chunks_exact(n).map(|col| dot(col, y)).collect()
}

/// `R z` for column-major `r` (n×k).
pub fn mul_cols(r: &[f64], n: usize, z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (col, &zc) in r.chunks_exact(n).zip(z) {
        if zc == 0.0 {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(col) {
            *o += v * zc;
        }
    }
    out
}

fn query_and_run<F>(routine: &'static str, mut call: F) -> Result<()>
where
    F: FnMut(&mut [f64], i32, &mut [i32], i32, &mut i32),
{
    let mut work = vec![0.0; 1];
    let mut iwork = vec![0i32; 1];
    let mut info = 0;
    call(&mut work, -1, &mut iwork, -1, &mut info);
    if info != 0 {
        return Err(Error::Lapack { routine, info });
    }
    let lwork = work[0] as usize;
    let liwork = iwork[0] as usize;
    let mut work = vec![0.0; lwork.max(1)];
    let mut iwork = vec![0i32; liwork.max(1)];
    call(&mut work, lwork as i32, &mut iwork, liwork as i32, &mut info);
    if info != 0 {
        return Err(Error::Lapack { routine, info });
    }
    Ok(())
}

/// Lowest `count` eigenpairs of the symmetric `n×n` matrix `a` (lower
/// triangle referenced, destroyed). Eigenvectors are unit 2-norm columns.
pub fn sym_eigen_lowest(a: &mut [f64], n: usize, count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    assert!(count >= 1 && count <= n);
    assert_eq!(a.len(), n * n);
    let nn = n as i32;
    let iu = count as i32;
    let mut found = 0i32;
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n * count];
    let mut isuppz = vec![0i32; 2 * count];
    let jobz = b'V' as c_char;
    let range = b'I' as c_char;
    let uplo = b'L' as c_char;
    query_and_run("dsyevr", |work, lwork, iwork, liwork, info| unsafe {
        lapack_sys::dsyevr_(
            &jobz,
            &range,
            &uplo,
            &nn,
            a.as_mut_ptr(),
            &nn,
            &0.0,
            &0.0,
            &1,
            &iu,
            &0.0,
            &mut found,
            w.as_mut_ptr(),
            z.as_mut_ptr(),
            &nn,
            isuppz.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            info,
        );
    })?;
    if found as usize != count {
        return Err(Error::Lapack {
            routine: "dsyevr",
            info: -1000 - found,
        });
    }
    w.truncate(count);
    Ok((w, z))
}

/// All eigenpairs (divide and conquer). Returns eigenvectors only when
/// `vectors` is set (otherwise an empty vector).
pub fn sym_eigen_all(mut a: Vec<f64>, n: usize, vectors: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let nn = n as i32;
    let mut w = vec![0.0; n];
    let jobz = if vectors { b'V' } else { b'N' } as c_char;
    let uplo = b'L' as c_char;
    query_and_run("dsyevd", |work, lwork, iwork, liwork, info| unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            info,
        );
    })?;
    if !vectors {
        a.clear();
    }
    Ok((w, a))
}

/// Householder QR of a column-major `m×n` matrix with `m ≥ n`.
#[derive(Debug, Clone)]
pub struct Qr {
    m: usize,
    n: usize,
    a: Vec<f64>,
    tau: Vec<f64>,
}

impl Qr {
    pub fn new(mut a: Vec<f64>, m: usize, n: usize) -> Result<Self> {
        assert!(m >= n && a.len() == m * n);
        let (mm, nn) = (m as i32, n as i32);
        let mut tau = vec![0.0; n];
        query_and_run("dgeqrf", |work, lwork, _, _, info| unsafe {
            lapack_sys::dgeqrf_(&mm, &nn, a.as_mut_ptr(), &mm, tau.as_mut_ptr(), work.as_mut_ptr(), &lwork, info);
        })?;
        Ok(Self { m, n, a, tau })
    }

    /// Minimizer of ‖A x − b‖.
    pub fn least_squares(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.m);
        let mut c = b.to_vec();
        let (mm, nn, one) = (self.m as i32, self.n as i32, 1i32);
        let (side, trans) = (b'L' as c_char, b'T' as c_char);
        query_and_run("dormqr", |work, lwork, _, _, info| unsafe {
            lapack_sys::dormqr_(
                &side,
                &trans,
                &mm,
                &one,
                &nn,
                self.a.as_ptr(),
                &mm,
                self.tau.as_ptr(),
                c.as_mut_ptr(),
                &mm,
                work.as_mut_ptr(),
                &lwork,
                info,
            );
        })?;
        c.truncate(self.n);
        self.triangular_solve(&mut c, 1, false)?;
        Ok(c)
    }

    /// Solves `R X = B` or `Rᵀ X = B` in place for `nrhs` columns of length n.
    pub fn triangular_solve(&self, b: &mut [f64], nrhs: usize, transpose: bool) -> Result<()> {
        let (mm, nn, nr) = (self.m as i32, self.n as i32, nrhs as i32);
        let uplo = b'U' as c_char;
        let trans = if transpose { b'T' } else { b'N' } as c_char;
        let diag = b'N' as c_char;
        let mut info = 0;
        unsafe {
            lapack_sys::dtrtrs_(&uplo, &trans, &diag, &nn, &nr, self.a.as_ptr(), &mm, b.as_mut_ptr(), &nn, &mut info);
        }
        if info != 0 {
            return Err(Error::Lapack {
                routine: "dtrtrs",
                info,
            });
        }
        Ok(())
    }
}

/// Solves a small dense general system by Gaussian elimination with partial
/// pivoting. Returns `None` when singular.
pub fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}
