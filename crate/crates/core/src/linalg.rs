//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Dense real matrix used throughout the crate.
pub type Matrix = DMatrix<f64>;

/// Frobenius norm `‖a‖_F`.
pub fn frobenius(a: &Matrix) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Squared Frobenius norm of `a - b` without allocating the difference.
pub fn frobenius_diff_sq(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Frobenius inner product `⟨a, b⟩ = tr(aᵀb)`.
pub fn inner(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Entrywise maximum absolute value `|a|_∞`.
pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Number of entries with magnitude strictly above `tol`.
pub fn count_nonzero(a: &Matrix, tol: f64) -> usize {
    a.iter().filter(|v| v.abs() > tol).count()
}

/// Largest absolute difference between `a` and its transpose.
pub fn asymmetry(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Overwrite `a` with `(a + aᵀ) / 2`.
pub fn symmetrize_in_place(a: &mut Matrix) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn is_finite(a: &Matrix) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
    SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect()
}

pub fn min_eigenvalue(a: &Matrix) -> f64 {
    sym_eigenvalues(a).into_iter().fold(f64::INFINITY, f64::min)
}

/// Spectral norm of a symmetric matrix (largest eigenvalue magnitude).
pub fn spectral_norm_sym(a: &Matrix) -> f64 {
    sym_eigenvalues(a).into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `log det a` for a symmetric positive-definite matrix, `None` otherwise.
pub fn log_det_spd(a: &Matrix) -> Option<f64> {
    if a.nrows() == 0 || min_eigenvalue(a) <= 0.0 {
        return None;
    }
    let chol = a.clone().cholesky()?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn inverse_spd(a: &Matrix) -> Result<Matrix> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    let mut inv = chol.inverse();
    symmetrize_in_place(&mut inv);
    Ok(inv)
}

pub(crate) fn check_square(name: &str, a: &Matrix, d: usize) -> Result<()> {
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {d}x{d}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}
