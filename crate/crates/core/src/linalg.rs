//! Small dense linear-algebra helpers on top of nalgebra.

use alloc::format;

use nalgebra::{Cholesky, Dyn};

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Jitter ladder used when a covariance fails to factor: `1e-10·I`, then
/// ten times larger at each attempt up to `1e-6·I`.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// `A ← (A + Aᵀ)/2`.
pub fn symmetrize(a: &mut Matrix) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Cholesky factorisation with jitter escalation on failure.
pub fn cholesky_jittered(a: &Matrix, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let n = a.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * 1.000_001 {
        let shifted = a + Matrix::identity(n, n) * jitter;
        if let Some(c) = Cholesky::new(shifted) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite(format!("{what} ({n}x{n})")))
}

/// Lower-triangular `L` with `L Lᵀ = A` for a symmetric positive
/// semidefinite `A`. Pivots that vanish (relative to the diagonal scale) give
/// zero columns, so singular and zero covariances factor exactly. A clearly
/// negative pivot is retried with the jitter ladder before failing.
pub fn psd_factor(a: &Matrix, what: &str) -> Result<Matrix> {
    if let Some(l) = try_psd_factor(a) {
        return Ok(l);
    }
    let n = a.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * 1.000_001 {
        let shifted = a + Matrix::identity(n, n) * jitter;
        if let Some(l) = try_psd_factor(&shifted) {
            return Ok(l);
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite(format!("{what} ({n}x{n})")))
}

fn try_psd_factor(a: &Matrix) -> Option<Matrix> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let tiny = 1e-14 * scale.max(f64::MIN_POSITIVE);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot < -1e-10 * scale.max(1.0) || !pivot.is_finite() {
            return None;
        }
        if pivot <= tiny {
            continue;
        }
        let d = libm::sqrt(pivot);
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix, i.e. its
/// spectral norm.
pub fn spectral_norm_psd(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// `log |A|` for symmetric positive definite `A`.
pub fn log_det_spd(a: &Matrix, what: &str) -> Result<f64> {
    let chol = cholesky_jittered(a, what)?;
    let l = chol.l_dirty();
    Ok((0..a.nrows()).map(|i| 2.0 * libm::log(l[(i, i)])).sum())
}

/// Outer product `a bᵀ`.
pub fn outer(a: &Vector, b: &Vector) -> Matrix {
    a * b.transpose()
}

/// Checks symmetry within `tol` and eigenvalues `>= -tol`.
pub fn is_symmetric_psd(a: &Matrix, tol: f64) -> bool {
    if a.nrows() != a.ncols() || a.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    let mut s = a.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().iter().all(|&v| v >= -tol)
}
