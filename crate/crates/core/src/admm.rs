//! ADMM solver for the multi-task graphical lasso initialization.
//!
//! The objective jointly estimates a shared precision component `Ω` and one
//! unique component `Γ_k` per study:
//!
//! ```text
//! min  Σ_k α_k { ⟨Ω + Γ_k, Σ̂ᵏ⟩ − log det(Ω + Γ_k) }
//!      + λ_M ( |Ω|₁ + Σ_k √α_k |Γ_k|₁ )        subject to Ω + Γ_k ≻ 0.
//! ```
//!
//! The problem is split as `f(X) + g(Y)` with `X = (Ω_0, …, Ω_K)` carrying the
//! log-det terms and `Y = (Ω, Γ_0, …, Γ_K)` carrying the penalty, coupled by
//! `Ω_k = Ω + Γ_k`. Each X-step is a closed-form eigenvalue update; each
//! Y-step decomposes into `d²` independent scalar problems, solved exactly by
//! default ([`shared_split_prox_exact`]) or by alternating soft-thresholding
//! ([`shared_split_prox`]). No operator-norm bound is imposed on the iterates.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::study_data::ProblemInstance;

/// How the scalar shared/unique split problems of the Y-step are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnerSolver {
    /// Closed-form breakpoint search ([`shared_split_prox_exact`]).
    #[default]
    Exact,
    /// Alternating soft-thresholding from zero ([`shared_split_prox`]),
    /// governed by the tolerances below.
    Alternating,
}

/// Settings for the inner two-block prox solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    pub solver: InnerSolver,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            solver: InnerSolver::Exact,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 500,
        }
    }
}

/// ADMM penalty, stopping tolerances and iteration limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub inner: InnerConfig,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            max_iter: 2000,
            inner: InnerConfig::default(),
        }
    }
}

impl AdmmConfig {
    /// Same configuration with both outer tolerances set to `eps`.
    pub fn with_tolerance(mut self, eps: f64) -> Self {
        self.eps_abs = eps;
        self.eps_rel = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.rho,
            self.eps_abs,
            self.eps_rel,
            self.inner.eps_abs,
            self.inner.eps_rel,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.max_iter == 0 || self.inner.max_iter == 0 {
            return Err(Error::Config(format!(
                "ADMM settings must be strictly positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `ST_λ(c)`: shrink `c` toward zero by `λ`.
#[inline]
pub fn soft_threshold(c: f64, lambda: f64) -> f64 {
    if c > lambda {
        c - lambda
    } else if c < -lambda {
        c + lambda
    } else {
        0.0
    }
}

/// Result of one scalar shared/unique split problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitProx {
    pub x: f64,
    pub y: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `ρ/2 Σ_k (x + y_k − c_k)² + λ_M |x| + λ_M Σ_k √α_k |y_k|` by
/// alternating exact minimization over `x` and `y`, starting from zero.
///
/// Stops once `ρ |Σ_k (y_k⁽ʳ⁾ − y_k⁽ʳ⁻¹⁾)|` falls below
/// `(K+1) ε_abs + ε_rel ρ max(Σ|y⁽ʳ⁾|, Σ|y⁽ʳ⁻¹⁾|)`. The returned `y` is always
/// the exact minimizer given the returned `x`.
pub fn shared_split_prox(c: &[f64], lambda_m: f64, rho: f64, alphas: &[f64], inner: &InnerConfig) -> SplitProx {
    assert_eq!(c.len(), alphas.len(), "one weight per study");
    let thresholds = y_thresholds(lambda_m, rho, alphas);
    let mut y = vec![0.0; c.len()];
    let (x, iterations, converged) = split_prox_into(c, 0.0, &mut y, lambda_m, rho, &thresholds, inner);
    SplitProx {
        x,
        y,
        iterations,
        converged,
    }
}

/// Exact minimizer of the same scalar problem as [`shared_split_prox`].
///
/// With `y` profiled out, the objective in `x` is `λ_M |x|` plus a sum of
/// Huber functions, whose derivative is piecewise linear and nondecreasing
/// with breakpoints at `c_k ± λ_M √α_k / ρ`. The root is found by scanning
/// those breakpoints; when the minimizing `x` is not unique the one closest
/// to zero is returned.
pub fn shared_split_prox_exact(c: &[f64], lambda_m: f64, rho: f64, alphas: &[f64]) -> SplitProx {
    assert_eq!(c.len(), alphas.len(), "one weight per study");
    let thresholds = y_thresholds(lambda_m, rho, alphas);
    let mut y = vec![0.0; c.len()];
    let mut buf = Vec::new();
    let x = exact_split_into(c, &mut y, lambda_m, rho, &thresholds, &mut buf);
    SplitProx {
        x,
        y,
        iterations: 0,
        converged: true,
    }
}

/// `φ(x) = −ρ Σ_k clip(s (c_k) − x, ±τ_k)` with `s = ±1`.
fn huber_slope(c: &[f64], sign: f64, tau: &[f64], rho: f64, x: f64) -> f64 {
    -rho * c
        .iter()
        .zip(tau)
        .map(|(ck, t)| (sign * ck - x).clamp(-t, *t))
        .sum::<f64>()
}

/// Smallest `x > 0` with `φ(x) = target`, given `φ(0) < target`.
fn positive_root(c: &[f64], sign: f64, tau: &[f64], rho: f64, target: f64, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    for (ck, t) in c.iter().zip(tau) {
        for b in [sign * ck - t, sign * ck + t] {
            if b > 0.0 {
                buf.push(b);
            }
        }
    }
    buf.sort_by(f64::total_cmp);
    let (mut prev, mut f_prev) = (0.0, huber_slope(c, sign, tau, rho, 0.0));
    for &b in buf.iter() {
        let f_b = huber_slope(c, sign, tau, rho, b);
        if f_b >= target {
            return prev + (target - f_prev) * (b - prev) / (f_b - f_prev);
        }
        (prev, f_prev) = (b, f_b);
    }
    prev
}

fn exact_split_into(c: &[f64], y: &mut [f64], lambda_m: f64, rho: f64, tau: &[f64], buf: &mut Vec<f64>) -> f64 {
    let at_zero = huber_slope(c, 1.0, tau, rho, 0.0);
    let x = if at_zero < -lambda_m {
        positive_root(c, 1.0, tau, rho, -lambda_m, buf)
    } else if at_zero > lambda_m {
        -positive_root(c, -1.0, tau, rho, -lambda_m, buf)
    } else {
        0.0
    };
    for ((yk, ck), t) in y.iter_mut().zip(c).zip(tau) {
        *yk = soft_threshold(ck - x, *t);
    }
    x
}

fn y_thresholds(lambda_m: f64, rho: f64, alphas: &[f64]) -> Vec<f64> {
    alphas.iter().map(|a| lambda_m * a.sqrt() / rho).collect()
}

/// Core of [`shared_split_prox`]; `y` holds the starting point on entry and
/// the solution on exit.
fn split_prox_into(
    c: &[f64],
    x0: f64,
    y: &mut [f64],
    lambda_m: f64,
    rho: f64,
    y_thresholds: &[f64],
    inner: &InnerConfig,
) -> (f64, usize, bool) {
    let m = c.len() as f64;
    let x_threshold = lambda_m / (rho * m);
    let mut x = x0;
    for r in 1..=inner.max_iter {
        let mean = c.iter().zip(y.iter()).map(|(ck, yk)| ck - yk).sum::<f64>() / m;
        x = soft_threshold(mean, x_threshold);

        let mut delta = 0.0;
        let mut abs_new = 0.0;
        let mut abs_old = 0.0;
        for ((yk, ck), tk) in y.iter_mut().zip(c).zip(y_thresholds) {
            let next = soft_threshold(ck - x, *tk);
            delta += next - *yk;
            abs_new += next.abs();
            abs_old += yk.abs();
            *yk = next;
        }
        let r_sub = rho * delta.abs();
        let eps_sub = m * inner.eps_abs + inner.eps_rel * rho * abs_new.max(abs_old);
        if r_sub <= eps_sub {
            return (x, r, true);
        }
    }
    (x, inner.max_iter, false)
}

/// Solve `−α Ω⁻¹ + ρ Ω − ρ C̃ = 0` for symmetric positive-definite `Ω`.
///
/// With `ρ C̃ = U diag(λ) Uᵀ` the solution is `U diag((λᵢ + √(λᵢ² + 4ρα)) / 2ρ) Uᵀ`.
pub fn omega_k_update(c_tilde: &Matrix, alpha_k: f64, rho: f64) -> Result<Matrix> {
    if !c_tilde.is_square() {
        return Err(Error::Dimension("C̃ must be square".into()));
    }
    if !(alpha_k > 0.0 && rho > 0.0) {
        return Err(Error::Contract(format!(
            "need α > 0 and ρ > 0, got α = {alpha_k}, ρ = {rho}"
        )));
    }
    let scale = linalg::max_abs(c_tilde).max(1.0);
    if linalg::asymmetry(c_tilde) > 1e-10 * scale {
        return Err(Error::Contract("C̃ is not symmetric".into()));
    }
    Ok(eigen_update(c_tilde * rho, alpha_k, rho))
}

/// `scaled` is `ρ C̃`, already symmetric.
fn eigen_update(scaled: Matrix, alpha_k: f64, rho: f64) -> Matrix {
    let eig = SymmetricEigen::new(scaled);
    let four_ra = 4.0 * rho * alpha_k;
    let values = eig.eigenvalues.map(|l| {
        let root = (l * l + four_ra).sqrt();
        // Rationalized branch avoids cancellation for strongly negative λ.
        if l >= 0.0 {
            (l + root) / (2.0 * rho)
        } else {
            2.0 * alpha_k / (root - l)
        }
    });
    let u = &eig.eigenvectors;
    let mut out = u * Matrix::from_diagonal(&values) * u.transpose();
    linalg::symmetrize_in_place(&mut out);
    out
}

/// Primal/dual residuals and their feasibility tolerances at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub r_pri: f64,
    pub r_dual: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
}

impl Residuals {
    pub fn converged(&self) -> bool {
        self.r_pri <= self.eps_pri && self.r_dual <= self.eps_dual
    }
}

/// Iterates needed to evaluate the stopping rule.
#[derive(Debug, Clone, Copy)]
pub struct ResidualInputs<'a> {
    /// Slack matrices `Ω_k⁽ᵗ⁾`.
    pub slacks: &'a [Matrix],
    /// `Ω⁽ᵗ⁾ + Γ_k⁽ᵗ⁾`.
    pub sums: &'a [Matrix],
    /// `Ω⁽ᵗ⁻¹⁾ + Γ_k⁽ᵗ⁻¹⁾`.
    pub prev_sums: &'a [Matrix],
    /// Scaled duals `Z_k⁽ᵗ⁾`.
    pub duals: &'a [Matrix],
}

/// Evaluate `r_pri`, `r_dual`, `ε_pri` and `ε_dual`.
pub fn residuals(inputs: ResidualInputs<'_>, rho: f64, eps_abs: f64, eps_rel: f64) -> Residuals {
    let studies = inputs.slacks.len();
    let d = inputs.slacks.first().map_or(0, |m| m.nrows()) as f64;
    let sum_sq = |ms: &[Matrix]| ms.iter().map(|m| linalg::frobenius(m).powi(2)).sum::<f64>();

    let r_pri = inputs
        .slacks
        .iter()
        .zip(inputs.sums)
        .map(|(a, b)| linalg::frobenius_diff_sq(a, b))
        .sum::<f64>()
        .sqrt();
    let r_dual = rho
        * inputs
            .sums
            .iter()
            .zip(inputs.prev_sums)
            .map(|(a, b)| linalg::frobenius_diff_sq(a, b))
            .sum::<f64>()
            .sqrt();
    let abs_term = eps_abs * d * (studies as f64).sqrt();
    let eps_pri = abs_term + eps_rel * sum_sq(inputs.slacks).sqrt().max(sum_sq(inputs.sums).sqrt());
    let eps_dual = abs_term + eps_rel * sum_sq(inputs.duals).sqrt();
    Residuals {
        r_pri,
        r_dual,
        eps_pri,
        eps_dual,
    }
}

/// Full ADMM iterate; also used to warm-start a neighbouring penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub shared: Matrix,
    pub uniques: Vec<Matrix>,
    pub slacks: Vec<Matrix>,
    pub duals: Vec<Matrix>,
}

impl AdmmState {
    /// `Ω = I`, `Γ_k = 0`, `Z_k = I`.
    pub fn initial(d: usize, studies: usize) -> Self {
        Self {
            shared: Matrix::identity(d, d),
            uniques: vec![Matrix::zeros(d, d); studies],
            slacks: vec![Matrix::identity(d, d); studies],
            duals: vec![Matrix::identity(d, d); studies],
        }
    }

    /// `Ω + Γ_k` for every study.
    pub fn sums(&self) -> Vec<Matrix> {
        self.uniques.iter().map(|g| &self.shared + g).collect()
    }
}

/// Output of [`solve_mtglasso`].
#[derive(Debug, Clone)]
pub struct MtGlassoSolution {
    /// Shared estimate `Ω̂`.
    pub shared: Matrix,
    /// Unique estimates `Γ̂⁰ … Γ̂ᴷ`.
    pub uniques: Vec<Matrix>,
    /// `Ω̌ᵏ = Ω̂ + Γ̂ᵏ`.
    pub initial_estimates: Vec<Matrix>,
    pub iterations: usize,
    pub final_r_pri: f64,
    pub final_r_dual: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub converged: bool,
    /// Entry problems whose inner loop hit its iteration cap, summed over iterations.
    pub inner_failures: usize,
    pub warnings: Vec<String>,
    pub state: AdmmState,
}

/// Solve the multi-task objective from the default initialization.
pub fn solve_mtglasso(problem: &ProblemInstance, lambda_m: f64, config: &AdmmConfig) -> Result<MtGlassoSolution> {
    solve_mtglasso_from(problem, lambda_m, config, None, |_, _| {})
}

/// Solve the multi-task objective, optionally warm-started, calling `observe`
/// with the iteration number and state after every iteration.
pub fn solve_mtglasso_from(
    problem: &ProblemInstance,
    lambda_m: f64,
    config: &AdmmConfig,
    warm: Option<&AdmmState>,
    mut observe: impl FnMut(usize, &AdmmState),
) -> Result<MtGlassoSolution> {
    config.validate()?;
    if !(lambda_m >= 0.0 && lambda_m.is_finite()) {
        return Err(Error::Contract(format!("λ_M must be finite and ≥ 0, got {lambda_m}")));
    }
    let d = problem.d();
    let studies = problem.num_sources() + 1;
    let mut state = match warm {
        Some(w) => {
            if w.uniques.len() != studies || w.shared.nrows() != d {
                return Err(Error::Dimension("warm start does not match the problem".into()));
            }
            w.clone()
        }
        None => AdmmState::initial(d, studies),
    };

    let rho = config.rho;
    let alphas = &problem.weights;
    let covs: Vec<&Matrix> = problem.covs().map(|c| &c.matrix).collect();
    let thresholds = y_thresholds(lambda_m, rho, alphas);

    let mut prev_sums = state.sums();
    let mut c_buf = vec![0.0; studies];
    let mut y_buf = vec![0.0; studies];
    let mut bp_buf = Vec::with_capacity(2 * studies);
    let mut inner_failures = 0usize;
    let mut last = Residuals {
        r_pri: f64::INFINITY,
        r_dual: f64::INFINITY,
        eps_pri: 0.0,
        eps_dual: 0.0,
    };
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=config.max_iter {
        iterations = t;

        // X-step: one eigen update per study.
        for k in 0..studies {
            let mut c_tilde = &prev_sums[k] - &state.duals[k];
            c_tilde -= covs[k] * (alphas[k] / rho);
            let slack = eigen_update(c_tilde * rho, alphas[k], rho);
            if !linalg::is_finite(&slack) {
                return Err(Error::Numeric(format!(
                    "non-finite slack iterate for study {k} at iteration {t}"
                )));
            }
            state.slacks[k] = slack;
        }

        // Y-step: independent scalar split problems on the upper triangle.
        for l in 0..d {
            for j in 0..=l {
                for k in 0..studies {
                    c_buf[k] = state.slacks[k][(j, l)] + state.duals[k][(j, l)];
                    y_buf[k] = 0.0;
                }
                let x = match config.inner.solver {
                    InnerSolver::Exact => exact_split_into(&c_buf, &mut y_buf, lambda_m, rho, &thresholds, &mut bp_buf),
                    InnerSolver::Alternating => {
                        let (x, _, ok) =
                            split_prox_into(&c_buf, 0.0, &mut y_buf, lambda_m, rho, &thresholds, &config.inner);
                        if !ok {
                            inner_failures += 1;
                        }
                        x
                    }
                };
                state.shared[(j, l)] = x;
                state.shared[(l, j)] = x;
                for (u, &y) in state.uniques.iter_mut().zip(y_buf.iter()) {
                    u[(j, l)] = y;
                    u[(l, j)] = y;
                }
            }
        }

        // Z-step (scaled dual).
        let sums = state.sums();
        for ((z, slack), sum) in state.duals.iter_mut().zip(&state.slacks).zip(&sums) {
            *z += slack - sum;
        }

        last = residuals(
            ResidualInputs {
                slacks: &state.slacks,
                sums: &sums,
                prev_sums: &prev_sums,
                duals: &state.duals,
            },
            rho,
            config.eps_abs,
            config.eps_rel,
        );
        if !(last.r_pri.is_finite() && last.r_dual.is_finite()) {
            return Err(Error::Numeric(format!("non-finite residual at iteration {t}")));
        }
        observe(t, &state);
        prev_sums = sums;
        if last.converged() {
            converged = true;
            break;
        }
    }

    let initial_estimates = prev_sums;
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "ADMM stopped after {iterations} iterations (r_pri = {:.3e}, r_dual = {:.3e})",
            last.r_pri, last.r_dual
        ));
    }
    for (k, est) in initial_estimates.iter().enumerate() {
        let min = linalg::min_eigenvalue(est);
        if min < -10.0 * last.eps_pri {
            warnings.push(format!("Ω̌ for study {k} has minimum eigenvalue {min:.3e}"));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(MtGlassoSolution {
        shared: state.shared.clone(),
        uniques: state.uniques.clone(),
        initial_estimates,
        iterations,
        final_r_pri: last.r_pri,
        final_r_dual: last.r_dual,
        eps_pri: last.eps_pri,
        eps_dual: last.eps_dual,
        converged,
        inner_failures,
        warnings,
        state,
    })
}
