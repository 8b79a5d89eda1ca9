//! Single-matrix graphical lasso baselines.
//!
//! [`glasso`] minimizes `⟨Ω, Σ̂⟩ − log det Ω + λ|Ω|₁` (diagonal penalized) with
//! the same eigen-update / soft-threshold ADMM used by the multi-task solver.
//! The two baselines differ only in which covariance they fit and which
//! sample count enters the BIC.

use crate::admm::{self, AdmmConfig, ResidualInputs, soft_threshold};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::pipeline::bic::bic_trans;
use crate::pipeline::grid::{GridChoice, GridSpec, TuningGrid, argmin_first};
use crate::study_data::{CovMatrix, ProblemInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct GlassoEstimate {
    pub omega: Matrix,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Warm-start state: `(Ω, Z)`.
#[derive(Debug, Clone)]
pub struct GlassoState {
    pub omega: Matrix,
    pub dual: Matrix,
}

/// Graphical lasso at a single penalty from `Ω = I`, `Z = I`.
pub fn glasso(sigma: &CovMatrix, lambda: f64, config: &AdmmConfig) -> Result<GlassoEstimate> {
    glasso_from(sigma, lambda, config, None).map(|(e, _)| e)
}

pub fn glasso_from(
    sigma: &CovMatrix,
    lambda: f64,
    config: &AdmmConfig,
    warm: Option<&GlassoState>,
) -> Result<(GlassoEstimate, GlassoState)> {
    config.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Contract(format!("λ must be finite and ≥ 0, got {lambda}")));
    }
    let d = sigma.d();
    let rho = config.rho;
    let (mut omega, mut dual) = match warm {
        Some(w) => (w.omega.clone(), w.dual.clone()),
        None => (Matrix::identity(d, d), Matrix::identity(d, d)),
    };
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=config.max_iter {
        iterations = t;
        let c_tilde = &omega - &dual - &sigma.matrix / rho;
        let slack = admm::omega_k_update(&c_tilde, 1.0, rho)?;
        if !linalg::is_finite(&slack) {
            return Err(Error::Numeric(format!("non-finite glasso iterate at iteration {t}")));
        }
        let mut next = &slack + &dual;
        next.apply(|v| *v = soft_threshold(*v, lambda / rho));
        dual += &slack - &next;

        let r = admm::residuals(
            ResidualInputs {
                slacks: std::slice::from_ref(&slack),
                sums: std::slice::from_ref(&next),
                prev_sums: std::slice::from_ref(&omega),
                duals: std::slice::from_ref(&dual),
            },
            rho,
            config.eps_abs,
            config.eps_rel,
        );
        omega = next;
        if r.converged() {
            converged = true;
            break;
        }
    }

    Ok((
        GlassoEstimate {
            omega: omega.clone(),
            lambda,
            converged,
            iterations,
        },
        GlassoState { omega, dual },
    ))
}

/// Outcome of a BIC-tuned baseline.
#[derive(Debug, Clone)]
pub struct GlassoSelection {
    pub estimate: GlassoEstimate,
    pub grid: TuningGrid,
    pub bic_trace: Vec<f64>,
    pub converged: Vec<bool>,
}

/// Tuning settings shared by both baselines.
#[derive(Debug, Clone, Default)]
pub struct BaselineConfig {
    pub admm: AdmmConfig,
    pub grid: GridChoice,
    pub grid_spec: GridSpec,
    pub zero_tol: f64,
}

impl BaselineConfig {
    pub fn new(admm: AdmmConfig) -> Self {
        Self {
            admm,
            grid: GridChoice::Auto,
            grid_spec: GridSpec::default(),
            zero_tol: 1e-8,
        }
    }
}

/// Sweep `grid` (warm-started, largest λ first) and keep the BIC minimizer,
/// scoring with `n` samples.
pub fn select_glasso(sigma: &CovMatrix, n: usize, config: &BaselineConfig) -> Result<GlassoSelection> {
    let grid = config.grid.resolve(linalg::max_abs(&sigma.matrix), config.grid_spec)?;
    let mut warm: Option<GlassoState> = None;
    let mut best: Option<GlassoEstimate> = None;
    let mut trace = Vec::with_capacity(grid.len());
    let mut flags = Vec::with_capacity(grid.len());
    for &lambda in grid.values() {
        let (est, state) = glasso_from(sigma, lambda, &config.admm, warm.as_ref())?;
        let bic = bic_trans(&sigma.matrix, &est.omega, n, config.zero_tol);
        flags.push(est.converged);
        trace.push(bic);
        if argmin_first(&trace) == Some(trace.len() - 1) {
            best = Some(est);
        }
        warm = Some(state);
    }
    let estimate = best
        .ok_or_else(|| Error::Selection("every glasso candidate produced a non positive-definite estimate".into()))?;
    Ok(GlassoSelection {
        estimate,
        grid,
        bic_trace: trace,
        converged: flags,
    })
}

/// Graphical lasso on the target covariance, BIC with `N = n₀`.
pub fn glasso_target(problem: &ProblemInstance, config: &BaselineConfig) -> Result<GlassoSelection> {
    select_glasso(&problem.target_cov, problem.target_cov.n, config)
}

/// Graphical lasso on `Σ_k α_k Σ̂ᵏ`, BIC with `N` = total sample count.
pub fn glasso_pooled(problem: &ProblemInstance, config: &BaselineConfig) -> Result<GlassoSelection> {
    let pooled = problem.pooled_cov();
    select_glasso(&pooled, problem.total_n, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::solve_mtglasso;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cov(m: Matrix, n: usize) -> CovMatrix {
        CovMatrix::new(m, n).unwrap()
    }

    fn random_cov(seed: u64, d: usize, n: usize) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        let mut c = x.tr_mul(&x) / n as f64;
        linalg::symmetrize_in_place(&mut c);
        c
    }

    fn tight() -> AdmmConfig {
        AdmmConfig::default().with_tolerance(1e-8)
    }

    #[test]
    fn identity_mle() {
        let e = glasso(&cov(Matrix::identity(2, 2), 10), 0.0, &tight()).unwrap();
        assert!(e.converged);
        assert!((e.omega - Matrix::identity(2, 2)).abs().max() < 1e-6);
    }

    #[test]
    fn identity_penalized() {
        let e = glasso(&cov(Matrix::identity(2, 2), 10), 1.0, &tight()).unwrap();
        assert!((e.omega - Matrix::identity(2, 2) * 0.5).abs().max() < 1e-4);
    }

    #[test]
    fn diagonal_inverse() {
        let s = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 4.0]));
        let e = glasso(&cov(s, 10), 0.0, &tight()).unwrap();
        assert!((e.omega[(0, 0)] - 0.5).abs() < 1e-6);
        assert!((e.omega[(1, 1)] - 0.25).abs() < 1e-6);
        assert!(e.omega[(0, 1)].abs() < 1e-6);
    }

    #[test]
    fn satisfies_kkt() {
        let s = random_cov(1, 6, 40);
        let cfg = AdmmConfig::default().with_tolerance(1e-7);
        for lambda in [0.01, 0.05, 0.2] {
            let e = glasso(&cov(s.clone(), 40), lambda, &cfg).unwrap();
            assert!(e.converged);
            assert!(linalg::min_eigenvalue(&e.omega) > 0.0);
            let grad = &s - linalg::inverse_spd(&e.omega).unwrap();
            let tol = 10.0 * 1e-7 * 6.0 * 10.0;
            for j in 0..6 {
                for l in 0..6 {
                    let w = e.omega[(j, l)];
                    if w != 0.0 {
                        assert!((grad[(j, l)] + lambda * w.signum()).abs() <= tol);
                    } else {
                        assert!(grad[(j, l)].abs() <= lambda + tol);
                    }
                }
            }
        }
    }

    #[test]
    fn agrees_with_single_study_multitask_solver() {
        let s = random_cov(2, 5, 30);
        let c = cov(s, 30);
        let problem = ProblemInstance::from_covariances(c.clone(), vec![]).unwrap();
        let cfg = AdmmConfig::default().with_tolerance(1e-6);
        for lambda in [0.02, 0.1] {
            let g = glasso(&c, lambda, &cfg).unwrap();
            let m = solve_mtglasso(&problem, lambda, &cfg).unwrap();
            let gap = linalg::frobenius(&(&g.omega - &m.initial_estimates[0]));
            assert!(gap < 1e-4, "λ = {lambda}: gap {gap}");
        }
    }

    #[test]
    fn singleton_grid_is_returned() {
        let problem = ProblemInstance::from_covariances(cov(random_cov(3, 4, 30), 30), vec![]).unwrap();
        let mut cfg = BaselineConfig::new(AdmmConfig::default());
        cfg.grid = GridChoice::Explicit(TuningGrid::new(vec![0.07]).unwrap());
        let sel = glasso_target(&problem, &cfg).unwrap();
        assert_eq!(sel.estimate.lambda, 0.07);
    }

    #[test]
    fn identity_data_stays_diagonal() {
        let problem = ProblemInstance::from_covariances(cov(Matrix::identity(3, 3), 20), vec![]).unwrap();
        let mut cfg = BaselineConfig::new(AdmmConfig::default());
        cfg.grid = GridChoice::Explicit(TuningGrid::new(vec![1.0, 0.1, 0.01]).unwrap());
        let sel = glasso_target(&problem, &cfg).unwrap();
        assert!(sel.bic_trace.iter().all(|b| b.is_finite()));
        for j in 0..3 {
            for l in 0..3 {
                if j != l {
                    assert_eq!(sel.estimate.omega[(j, l)], 0.0);
                }
            }
        }
    }

    #[test]
    fn pooling_identical_studies_is_a_no_op() {
        let s = random_cov(4, 4, 50);
        let problem =
            ProblemInstance::from_covariances(cov(s.clone(), 50), vec![cov(s.clone(), 50), cov(s, 50)]).unwrap();
        let cfg = BaselineConfig::new(tight());
        let pooled = glasso_pooled(&problem, &cfg).unwrap();
        let direct = glasso(&problem.target_cov, pooled.estimate.lambda, &cfg.admm).unwrap();
        assert!((&pooled.estimate.omega - &direct.omega).abs().max() < 1e-5);

        let mut fixed = cfg.clone();
        fixed.grid = GridChoice::Explicit(TuningGrid::new(vec![0.05]).unwrap());
        let target = glasso_target(&problem, &fixed).unwrap();
        let pooled = glasso_pooled(&problem, &fixed).unwrap();
        assert!((&target.estimate.omega - &pooled.estimate.omega).abs().max() < 1e-8);
    }

    #[test]
    fn pooled_covariance_of_two_scaled_identities() {
        let problem = ProblemInstance::from_covariances(
            cov(Matrix::identity(2, 2), 10),
            vec![cov(Matrix::identity(2, 2) * 3.0, 10)],
        )
        .unwrap();
        assert_eq!(problem.pooled_cov().matrix, Matrix::identity(2, 2) * 2.0);
    }
}
