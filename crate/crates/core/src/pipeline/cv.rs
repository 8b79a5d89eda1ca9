//! Informative-set selection by source ranking and target-fold cross-validation.

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    CvDiagnostics, PsiSelection, TransGlassoConfig, TransGlassoEstimate, bic::cv_error, select_all_psis,
    trans_glasso_with_psis,
};
use crate::baselines::{BaselineConfig, glasso_target};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::study_data::{CovMatrix, ProblemInstance, StudyData, sample_covariance};

/// Settings for [`trans_glasso_cv`].
#[derive(Debug, Clone)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    /// Center each study (and each training fold) before forming covariances.
    pub center: bool,
    pub fit: TransGlassoConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            center: false,
            fit: TransGlassoConfig::default(),
        }
    }
}

impl CvConfig {
    fn baseline(&self) -> BaselineConfig {
        BaselineConfig {
            admm: self.fit.admm,
            grid: self.fit.lambda_m_grid.clone(),
            grid_spec: self.fit.grid_spec,
            zero_tol: self.fit.omega_zero_tol,
        }
    }
}

/// Rank sources by support size of their differential networks, smallest
/// first; ties go to the lower source index. `ranks[k-1]` is `R_k ∈ 1..=K`.
pub fn rank_sources(support_sizes: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..support_sizes.len()).collect();
    order.sort_by_key(|&i| (support_sizes[i], i));
    let mut ranks = vec![0; support_sizes.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

/// Partition `0..n` into `m` folds after a seeded shuffle; fold sizes differ
/// by at most one and each fold is sorted.
pub fn cv_folds(n: usize, m: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if m < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {m}")));
    }
    if n < m {
        return Err(Error::Dimension(format!("{n} target samples cannot fill {m} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / m + 1); m];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % m].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

fn target_only(target_cov: CovMatrix, cfg: &CvConfig) -> Result<TransGlassoEstimate> {
    let problem = ProblemInstance::from_covariances(target_cov, vec![])?;
    let sel = glasso_target(&problem, &cfg.baseline())?;
    let mut est = TransGlassoEstimate {
        omega0: sel.estimate.omega,
        lambda_m: sel.estimate.lambda,
        psi_lambdas: vec![],
        informative_set: vec![],
        diagnostics: Default::default(),
    };
    est.diagnostics.lambda_m_grid = sel.grid.values().to_vec();
    est.diagnostics.bic_m_trace = sel.bic_trace;
    est.diagnostics.admm_converged = sel.converged;
    est.diagnostics.target_only = true;
    Ok(est)
}

/// Validation rows, centered with the training mean when requested.
fn validation_rows(target: &StudyData, val: &[usize], train: &StudyData, center: bool) -> Matrix {
    let d = target.d();
    let means = if center { train.column_means() } else { vec![0.0; d] };
    Matrix::from_fn(val.len(), d, |i, j| target.samples()[(val[i], j)] - means[j])
}

/// Trans-Glasso with the informative set chosen by cross-validation on the
/// target samples.
///
/// Sources are ranked by the sparsity of their BIC-tuned differential
/// networks on the full data. For each `K_chosen = 0..=K` the `K_chosen`
/// best-ranked sources are refit with every training fold of the target
/// (`K_chosen = 0` is the target-only graphical lasso), and the held-out
/// score is averaged over folds. The final fit uses all target samples plus
/// the selected sources.
pub fn trans_glasso_cv(target: &StudyData, sources: &[StudyData], cfg: &CvConfig) -> Result<TransGlassoEstimate> {
    if target.n() < cfg.folds {
        return Err(Error::Dimension(format!(
            "{} target samples cannot fill {} folds",
            target.n(),
            cfg.folds
        )));
    }
    let full_target_cov = sample_covariance(target, cfg.center)?;
    if sources.is_empty() {
        return target_only(full_target_cov, cfg);
    }
    let folds = cv_folds(target.n(), cfg.folds, cfg.seed)?;
    let source_covs = sources
        .iter()
        .map(|s| {
            if s.d() != target.d() {
                return Err(Error::Dimension(format!(
                    "source has {} variables, target has {}",
                    s.d(),
                    target.d()
                )));
            }
            sample_covariance(s, cfg.center)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = sources.len();

    let full = ProblemInstance::from_covariances(full_target_cov.clone(), source_covs.clone())?;
    let psis = select_all_psis(&full, &cfg.fit)?;
    let ranks = rank_sources(&psis.iter().map(|p| p.network.support_size).collect::<Vec<_>>());
    let chosen = |kc: usize| -> Vec<usize> { (1..=k).filter(|&s| ranks[s - 1] <= kc).collect() };

    // Training covariances and differential networks per fold do not depend
    // on K_chosen, so they are computed once.
    let fold_data = folds
        .par_iter()
        .map(|val| {
            let train_rows: Vec<usize> = (0..target.n()).filter(|i| val.binary_search(i).is_err()).collect();
            let train = target.select_rows(&train_rows)?;
            let cov = sample_covariance(&train, cfg.center)?;
            let fold_problem = ProblemInstance::from_covariances(cov.clone(), source_covs.clone())?;
            let fold_psis = select_all_psis(&fold_problem, &cfg.fit);
            Ok((
                validation_rows(target, val, &train, cfg.center),
                fold_problem,
                fold_psis,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let fit_subset = |problem: &ProblemInstance, psis: &[PsiSelection], ids: &[usize]| {
        let subset: Vec<PsiSelection> = ids.iter().map(|&s| psis[s - 1].clone()).collect();
        let mut est = trans_glasso_with_psis(&problem.with_sources(ids)?, subset, &cfg.fit)?;
        est.informative_set = ids.to_vec();
        for (p, &s) in est.diagnostics.psi.iter_mut().zip(ids) {
            p.source = s;
        }
        Ok::<_, Error>(est)
    };

    let jobs: Vec<(usize, usize)> = (0..=k).flat_map(|kc| (0..folds.len()).map(move |m| (kc, m))).collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(kc, m)| {
            let (val, problem, psis) = &fold_data[m];
            let fit = if kc == 0 {
                target_only(problem.target_cov.clone(), cfg)
            } else {
                psis.as_ref()
                    .map_err(|e| Error::Selection(e.to_string()))
                    .and_then(|psis| fit_subset(problem, psis, &chosen(kc)))
            };
            match fit {
                Ok(est) => cv_error(val, &est.omega0).unwrap_or(f64::INFINITY),
                Err(e) => {
                    log::warn!("CV fit failed for K_chosen = {kc}, fold {m}: {e}");
                    f64::INFINITY
                }
            }
        })
        .collect();

    let cv_errors: Vec<f64> = scores
        .chunks(folds.len())
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let k_chosen = super::grid::argmin_first(&cv_errors)
        .ok_or_else(|| Error::Selection("every candidate informative set failed cross-validation".into()))?;
    let selected = chosen(k_chosen);

    let mut est = if selected.is_empty() {
        target_only(full_target_cov, cfg)?
    } else {
        fit_subset(&full, &psis, &selected)?
    };
    est.diagnostics.cv = Some(CvDiagnostics {
        ranks,
        cv_errors,
        k_chosen,
        folds: folds.len(),
    });
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranks_reverse_order() {
        assert_eq!(rank_sources(&[2, 0]), vec![2, 1]);
    }

    #[test]
    fn ranks_break_ties_by_index() {
        assert_eq!(rank_sources(&[4, 4]), vec![1, 2]);
    }

    #[test]
    fn ranks_sort() {
        assert_eq!(rank_sources(&[0, 5, 3]), vec![1, 3, 2]);
    }

    #[test]
    fn too_few_samples_for_folds() {
        assert!(matches!(cv_folds(3, 5, 0), Err(Error::Dimension(_))));
    }

    proptest! {
        #[test]
        fn folds_partition_indices(n in 2usize..200, m in 2usize..10, seed in any::<u64>()) {
            prop_assume!(n >= m);
            let folds = cv_folds(n, m, seed).unwrap();
            prop_assert_eq!(folds.len(), m);
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert_eq!(folds, cv_folds(n, m, seed).unwrap());
        }
    }
}
