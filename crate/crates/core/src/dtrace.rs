//! Differential-network estimation with the D-Trace loss.
//!
//! For a target covariance `Σ̂⁰` and a source covariance `Σ̂ᵏ` the smooth loss
//!
//! ```text
//! L_D(Ψ) = ¼ (⟨Σ̂⁰Ψ, ΨΣ̂ᵏ⟩ + ⟨Σ̂ᵏΨ, ΨΣ̂⁰⟩) − ⟨Ψ, Σ̂⁰ − Σ̂ᵏ⟩
//! ```
//!
//! is minimized at `Ψ = Ωᵏ − Ω⁰` in the population. [`solve_dtrace`] adds an
//! `λ|Ψ|₁` penalty and runs proximal gradient descent with entrywise
//! soft-thresholding.

use crate::admm::soft_threshold;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::study_data::CovMatrix;

/// Stopping rule and iteration cap for the proximal gradient solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtraceConfig {
    /// Step size; `None` means [`default_step`].
    pub eta: Option<f64>,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
}

impl Default for DtraceConfig {
    fn default() -> Self {
        Self {
            eta: None,
            eps_abs: 1e-6,
            eps_rel: 1e-4,
            max_iter: 5000,
        }
    }
}

/// Estimated differential network for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffNetwork {
    pub psi: Matrix,
    pub lambda: f64,
    /// Entries with `|value| > zero_tol`.
    pub support_size: usize,
    pub zero_tol: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DiffNetwork {
    /// The target's own differential network, identically zero.
    pub fn zero(d: usize) -> Self {
        Self {
            psi: Matrix::zeros(d, d),
            lambda: 0.0,
            support_size: 0,
            zero_tol: 0.0,
            iterations: 0,
            converged: true,
        }
    }
}

fn check_dims(psi: &Matrix, sigma0: &CovMatrix, sigmak: &CovMatrix) -> Result<usize> {
    let d = sigma0.d();
    linalg::check_square("Σ̂ᵏ", &sigmak.matrix, d)?;
    linalg::check_square("Ψ", psi, d)?;
    Ok(d)
}

/// Smooth D-Trace loss (penalty excluded).
pub fn dtrace_objective(psi: &Matrix, sigma0: &CovMatrix, sigmak: &CovMatrix) -> Result<f64> {
    check_dims(psi, sigma0, sigmak)?;
    Ok(objective_unchecked(psi, &sigma0.matrix, &sigmak.matrix))
}

fn objective_unchecked(psi: &Matrix, s0: &Matrix, sk: &Matrix) -> f64 {
    let a = s0 * psi;
    let b = psi * sk;
    let c = sk * psi;
    let e = psi * s0;
    0.25 * (linalg::inner(&a, &b) + linalg::inner(&c, &e)) - linalg::inner(psi, &(s0 - sk))
}

/// `∇L_D(Ψ) = ½(Σ̂ᵏΨΣ̂⁰ + Σ̂⁰ΨΣ̂ᵏ) − (Σ̂⁰ − Σ̂ᵏ)`.
pub fn dtrace_gradient(psi: &Matrix, sigma0: &CovMatrix, sigmak: &CovMatrix) -> Result<Matrix> {
    check_dims(psi, sigma0, sigmak)?;
    let diff = &sigma0.matrix - &sigmak.matrix;
    Ok(gradient_unchecked(psi, &sigma0.matrix, &sigmak.matrix, &diff))
}

/// Symmetric part `½(Σ̂ᵏΨΣ̂⁰ + Σ̂⁰ΨΣ̂ᵏ)` of the gradient.
fn quadratic_term(psi: &Matrix, s0: &Matrix, sk: &Matrix) -> Matrix {
    let left = sk * psi * s0;
    (&left + left.transpose()) * 0.5
}

fn gradient_unchecked(psi: &Matrix, s0: &Matrix, sk: &Matrix, diff: &Matrix) -> Matrix {
    // Σ̂⁰ΨΣ̂ᵏ = (Σ̂ᵏΨᵀΣ̂⁰)ᵀ, which equals the transpose of the first product for symmetric Ψ.
    let quad = if linalg::asymmetry(psi) == 0.0 {
        quadratic_term(psi, s0, sk)
    } else {
        (sk * psi * s0 + s0 * psi * sk) * 0.5
    };
    quad - diff
}

/// `1 / (‖Σ̂⁰‖₂ ‖Σ̂ᵏ‖₂)`, the inverse Lipschitz constant of `∇L_D`.
pub fn default_step(sigma0: &CovMatrix, sigmak: &CovMatrix) -> Result<f64> {
    let n0 = linalg::spectral_norm_sym(&sigma0.matrix);
    let nk = linalg::spectral_norm_sym(&sigmak.matrix);
    if !(n0 > 0.0 && nk > 0.0) {
        return Err(Error::Numeric(
            "step size undefined for a zero covariance matrix".into(),
        ));
    }
    Ok(1.0 / (n0 * nk))
}

/// Solve the penalized D-Trace problem from `Ψ⁽⁰⁾ = 0`.
pub fn solve_dtrace(sigma0: &CovMatrix, sigmak: &CovMatrix, lambda: f64, config: &DtraceConfig) -> Result<DiffNetwork> {
    solve_dtrace_from(sigma0, sigmak, lambda, config, None, |_, _| {})
}

/// Proximal gradient iterations from an optional starting point; `observe`
/// receives the iteration number and each new iterate.
pub fn solve_dtrace_from(
    sigma0: &CovMatrix,
    sigmak: &CovMatrix,
    lambda: f64,
    config: &DtraceConfig,
    init: Option<&Matrix>,
    mut observe: impl FnMut(usize, &Matrix),
) -> Result<DiffNetwork> {
    let d = sigma0.d();
    linalg::check_square("Σ̂ᵏ", &sigmak.matrix, d)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Contract(format!("λ must be finite and ≥ 0, got {lambda}")));
    }
    if !(config.eps_abs > 0.0 && config.eps_rel > 0.0 && config.max_iter > 0) {
        return Err(Error::Config(format!("invalid D-Trace settings: {config:?}")));
    }
    let eta = match config.eta {
        Some(eta) if eta > 0.0 && eta.is_finite() => eta,
        Some(eta) => return Err(Error::Config(format!("step size must be positive, got {eta}"))),
        None => default_step(sigma0, sigmak)?,
    };

    let s0 = &sigma0.matrix;
    let sk = &sigmak.matrix;
    let diff = s0 - sk;
    let shrink = lambda * eta;

    let mut psi = match init {
        Some(m) => {
            linalg::check_square("initial Ψ", m, d)?;
            m.clone()
        }
        None => Matrix::zeros(d, d),
    };
    let mut quad = quadratic_term(&psi, s0, sk);
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=config.max_iter {
        iterations = t;
        // A = Ψ − η∇L_D(Ψ), then entrywise soft-thresholding at λη.
        let mut next = &psi - (&quad - &diff) * eta;
        next.apply(|a| *a = soft_threshold(*a, shrink));
        if !linalg::is_finite(&next) {
            return Err(Error::Numeric(format!("non-finite D-Trace iterate at iteration {t}")));
        }

        let step = &next - &psi;
        let next_quad = quadratic_term(&next, s0, sk);
        let quad_step = &next_quad - &quad;
        let r_d = linalg::frobenius(&(&step / eta - &quad_step));
        let half_cross = s0 * &step * sk * 0.5;
        let eps_d = config.eps_abs * d as f64
            + config.eps_rel * (linalg::frobenius(&step) / eta).max(linalg::frobenius(&half_cross));

        psi = next;
        quad = next_quad;
        observe(t, &psi);
        if r_d <= eps_d {
            converged = true;
            break;
        }
    }

    if !converged {
        log::debug!("D-Trace at λ = {lambda:e} stopped after {iterations} iterations");
    }
    Ok(DiffNetwork {
        support_size: linalg::count_nonzero(&psi, 0.0),
        psi,
        lambda,
        zero_tol: 0.0,
        iterations,
        converged,
    })
}

/// Apply a single proximal step from `psi`; exposed for fixed-point checks.
pub fn prox_step(psi: &Matrix, sigma0: &CovMatrix, sigmak: &CovMatrix, lambda: f64, eta: f64) -> Result<Matrix> {
    let grad = dtrace_gradient(psi, sigma0, sigmak)?;
    let mut next = psi - grad * eta;
    next.apply(|a| *a = soft_threshold(*a, lambda * eta));
    Ok(next)
}
