//! Information criteria and the held-out likelihood score.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::study_data::CovMatrix;

/// D-Trace BIC:
/// `(n₀ + n_k) ‖½(Σ̂⁰ΨΣ̂ᵏ + Σ̂ᵏΨΣ̂⁰) − Σ̂⁰ + Σ̂ᵏ‖_F + log(n₀ + n_k) |Ψ|₀`.
///
/// The Frobenius term is not squared. `|Ψ|₀` counts every entry above
/// `zero_tol`, both triangles and the diagonal.
pub fn bic_dtrace(
    sigma0: &CovMatrix,
    sigmak: &CovMatrix,
    psi: &Matrix,
    n0: usize,
    nk: usize,
    zero_tol: f64,
) -> Result<f64> {
    let d = sigma0.d();
    linalg::check_square("Σ̂ᵏ", &sigmak.matrix, d)?;
    linalg::check_square("Ψ", psi, d)?;
    let s0 = &sigma0.matrix;
    let sk = &sigmak.matrix;
    let resid = (s0 * psi * sk + sk * psi * s0) * 0.5 - s0 + sk;
    let n = (n0 + nk) as f64;
    Ok(n * linalg::frobenius(&resid) + n.ln() * linalg::count_nonzero(psi, zero_tol) as f64)
}

/// Trans-Glasso BIC:
/// `N [⟨Σ̂⁰, Ω̂⁰⟩ − log det Ω̂⁰] + log N |Ω̂⁰|₀`, or `+∞` when `Ω̂⁰` is not
/// positive definite.
pub fn bic_trans(sigma0: &Matrix, omega0: &Matrix, n_total: usize, zero_tol: f64) -> f64 {
    if sigma0.shape() != omega0.shape() {
        return f64::INFINITY;
    }
    let Some(log_det) = linalg::log_det_spd(omega0) else {
        return f64::INFINITY;
    };
    let n = n_total as f64;
    n * (linalg::inner(sigma0, omega0) - log_det) + n.ln() * linalg::count_nonzero(omega0, zero_tol) as f64
}

/// Held-out Gaussian score on validation rows:
/// `(1/2d) [mean_i xᵢᵀΩ̂⁰xᵢ − log det Ω̂⁰] + ½ log π`, `+∞` if `Ω̂⁰` is not
/// positive definite.
pub fn cv_error(validation: &Matrix, omega0: &Matrix) -> Result<f64> {
    let d = omega0.nrows();
    if validation.nrows() == 0 {
        return Err(Error::Dimension("validation set is empty".into()));
    }
    if validation.ncols() != d || !omega0.is_square() {
        return Err(Error::Dimension(format!(
            "validation has {} columns, estimate is {}x{}",
            validation.ncols(),
            omega0.nrows(),
            omega0.ncols()
        )));
    }
    let Some(log_det) = linalg::log_det_spd(omega0) else {
        return Ok(f64::INFINITY);
    };
    let quad: f64 = validation.row_iter().map(|x| (x * omega0).dot(&x)).sum::<f64>() / validation.nrows() as f64;
    Ok((quad - log_det) / (2.0 * d as f64) + 0.5 * std::f64::consts::PI.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn cov(m: Matrix) -> CovMatrix {
        CovMatrix::new(m, 5).unwrap()
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn bic_dtrace_scalar_hand_value() {
        let v = bic_dtrace(&cov(scalar(2.0)), &cov(scalar(1.0)), &scalar(0.5), 5, 5, 0.0).unwrap();
        assert!((v - 10.0_f64.ln()).abs() < 1e-12);
        assert!((v - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn bic_dtrace_zero_psi_is_scaled_gap() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let b = Matrix::identity(2, 2);
        let v = bic_dtrace(&cov(a.clone()), &cov(b.clone()), &Matrix::zeros(2, 2), 7, 3, 0.0).unwrap();
        assert!((v - 10.0 * linalg::frobenius(&(b - &a))).abs() < 1e-12);
        let same = bic_dtrace(&cov(a.clone()), &cov(a), &Matrix::zeros(2, 2), 7, 3, 0.0).unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn bic_trans_scalar_hand_value() {
        let v = bic_trans(&scalar(2.0), &scalar(0.5), 10, 1e-8);
        let expected = 10.0 * (1.0 - 0.5_f64.ln()) + 10.0_f64.ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 19.23406).abs() < 1e-5);
    }

    #[test]
    fn bic_trans_excludes_indefinite() {
        let omega = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(bic_trans(&Matrix::identity(2, 2), &omega, 10, 1e-8), f64::INFINITY);
    }

    #[test]
    fn bic_trans_identity() {
        let d = 4;
        let n = 50usize;
        let v = bic_trans(&Matrix::identity(d, d), &Matrix::identity(d, d), n, 0.5);
        let expected = n as f64 * d as f64 + (n as f64).ln() * d as f64;
        assert!((v - expected).abs() < 1e-10);
    }

    #[test]
    fn cv_error_hand_values() {
        let one = cv_error(&scalar(1.0), &scalar(1.0)).unwrap();
        assert!((one - (0.5 + 0.5 * std::f64::consts::PI.ln())).abs() < 1e-12);
        assert!((one - 1.072365).abs() < 1e-6);

        let x = Matrix::identity(2, 2);
        let two = cv_error(&x, &Matrix::identity(2, 2)).unwrap();
        assert!((two - (0.25 + 0.5 * std::f64::consts::PI.ln())).abs() < 1e-12);
        assert!((two - 0.822365).abs() < 1e-6);
    }

    #[test]
    fn cv_error_edge_cases() {
        let omega = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(cv_error(&Matrix::identity(2, 2), &omega).unwrap(), f64::INFINITY);
        assert!(matches!(
            cv_error(&Matrix::zeros(0, 2), &Matrix::identity(2, 2)),
            Err(Error::Dimension(_))
        ));
    }
}
