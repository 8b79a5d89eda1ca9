//! Repeated simulation runs scored by Frobenius error.
//!
//! Seeds are derived per repetition and per study with [`derive_seed`], so a
//! report does not depend on how repetitions are scheduled across threads.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::{ModelId, derive_seed, frob_error, gen_model, sample_gaussian};
use crate::baselines::{BaselineConfig, glasso_pooled, glasso_target};
use crate::error::{Error, Result};
use crate::pipeline::{CvConfig, TransGlassoConfig, trans_glasso, trans_glasso_cv};
use crate::study_data::{ProblemInstance, StudyData, sample_covariance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    GlassoTarget,
    GlassoPooled,
    /// Trans-Glasso with every source treated as informative.
    TransGlasso,
    TransGlassoCv,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::GlassoTarget,
        Estimator::GlassoPooled,
        Estimator::TransGlasso,
        Estimator::TransGlassoCv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::GlassoTarget => "glasso-target",
            Estimator::GlassoPooled => "glasso-pooled",
            Estimator::TransGlasso => "trans-glasso",
            Estimator::TransGlassoCv => "trans-glasso-cv",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelId,
    /// Free-form label written to the `design` column.
    pub design: String,
    pub d: usize,
    pub k: usize,
    pub n0: usize,
    pub n_source: usize,
    /// One value for every study, or `K + 1` values (target first).
    pub h: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub folds: usize,
    pub fit: TransGlassoConfig,
}

impl ExperimentConfig {
    pub fn new(model: ModelId, d: usize, k: usize, n0: usize, n_source: usize, h: Vec<usize>) -> Self {
        Self {
            model,
            design: "custom".into(),
            d,
            k,
            n0,
            n_source,
            h,
            repetitions: 1,
            seed: 0,
            estimators: vec![Estimator::GlassoTarget, Estimator::GlassoPooled, Estimator::TransGlasso],
            folds: 5,
            fit: TransGlassoConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 || self.n0 < 2 || self.repetitions == 0 {
            return Err(Error::Config("d, n0 must be ≥ 2 and repetitions ≥ 1".into()));
        }
        if self.k > 0 && self.n_source < 2 {
            return Err(Error::Config("n_source must be ≥ 2 when K > 0".into()));
        }
        if self.h.len() != 1 && self.h.len() != self.k + 1 {
            return Err(Error::Config(format!(
                "expected 1 or {} sparsity levels, got {}",
                self.k + 1,
                self.h.len()
            )));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        if self.estimators.contains(&Estimator::TransGlassoCv) && self.n0 < self.folds {
            return Err(Error::Config(format!(
                "n0 = {} cannot fill {} folds",
                self.n0, self.folds
            )));
        }
        self.fit.admm.validate()?;
        // Catch impossible h values once instead of in every repetition.
        gen_model(self.model, self.d, self.k, &self.h, self.seed).map(|_| ())
    }

    /// Named configurations at desk scale (`d = 30`, `K = 3`, 10 repetitions)
    /// and at full scale (`d = 100`, `K = 5`, 30 repetitions).
    pub fn preset(name: &str) -> Result<Self> {
        use Estimator::*;
        use ModelId::*;
        let known = [Estimator::GlassoTarget, GlassoPooled, TransGlasso];
        let (model, d, k, n0, ns, h, design, estimators): (_, _, _, _, _, Vec<usize>, _, Vec<Estimator>) = match name {
            "model1-desk" => (I, 30, 3, 100, 300, vec![10], "default", known.to_vec()),
            "model2-desk" => (II, 30, 3, 100, 300, vec![10], "default", known.to_vec()),
            "model3-desk" => (III, 30, 3, 100, 300, vec![10], "default", known.to_vec()),
            "model1-mixed-desk" => (I, 30, 3, 100, 300, vec![6, 6, 6, 60], "mixed", Estimator::ALL.to_vec()),
            "model1-adversarial-desk" => (
                I,
                30,
                3,
                100,
                300,
                vec![6, 60, 60, 60],
                "adversarial",
                Estimator::ALL.to_vec(),
            ),
            "model1-full" => (I, 100, 5, 300, 1000, vec![40], "default", known.to_vec()),
            "model2-full" => (II, 100, 5, 750, 2000, vec![40], "default", known.to_vec()),
            "model3-full" => (III, 100, 5, 150, 1000, vec![40], "default", known.to_vec()),
            "model1-unknown-full" => (
                I,
                100,
                5,
                300,
                1000,
                vec![20, 20, 20, 20, 600, 600],
                "unknown",
                Estimator::ALL.to_vec(),
            ),
            "model2-unknown-full" => (
                II,
                100,
                5,
                750,
                2000,
                vec![30, 30, 30, 30, 600, 600],
                "unknown",
                Estimator::ALL.to_vec(),
            ),
            "model3-unknown-full" => (
                III,
                100,
                5,
                300,
                1000,
                vec![10, 10, 10, 10, 300, 300],
                "unknown",
                Estimator::ALL.to_vec(),
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; known presets: {}",
                    PRESETS.join(", ")
                )));
            }
        };
        let mut cfg = Self::new(model, d, k, n0, ns, h);
        cfg.design = design.into();
        cfg.estimators = estimators;
        cfg.repetitions = if name.ends_with("-full") { 30 } else { 10 };
        Ok(cfg)
    }
}

pub const PRESETS: [&str; 11] = [
    "model1-desk",
    "model2-desk",
    "model3-desk",
    "model1-mixed-desk",
    "model1-adversarial-desk",
    "model1-full",
    "model2-full",
    "model3-full",
    "model1-unknown-full",
    "model2-unknown-full",
    "model3-unknown-full",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub model: ModelId,
    pub design: String,
    pub rep: usize,
    pub estimator: Estimator,
    /// `None` when the estimator failed on this repetition.
    pub frob_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub estimator: Estimator,
    /// Repetitions with a recorded error.
    pub n: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation over `√n`; `None` when `n < 2`.
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
}

impl Report {
    pub fn errors(&self, estimator: Estimator) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .filter(|r| r.estimator == estimator)
            .map(|r| r.frob_error)
            .collect()
    }

    pub fn summary_for(&self, estimator: Estimator) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.estimator == estimator)
    }

    /// True when no estimator produced a value on any repetition.
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| r.frob_error.is_none())
    }

    /// CSV with header `model,design,rep,estimator,frob_error`; failures
    /// leave `frob_error` empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("writing report: {e}"));
        w.write_record(["model", "design", "rep", "estimator", "frob_error"])
            .map_err(io)?;
        for r in &self.rows {
            let err = r.frob_error.map(|v| format!("{v:.16e}")).unwrap_or_default();
            w.write_record([
                r.model.to_string(),
                r.design.clone(),
                r.rep.to_string(),
                r.estimator.to_string(),
                err,
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing report: {e}")))
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.summary).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn summarize(estimator: Estimator, errors: &[Option<f64>]) -> SummaryRow {
    let vals: Vec<f64> = errors.iter().flatten().copied().collect();
    let n = vals.len();
    let mean = (n > 0).then(|| vals.iter().sum::<f64>() / n as f64);
    let stderr = match (mean, n) {
        (Some(m), n) if n >= 2 => {
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            Some((var / n as f64).sqrt())
        }
        _ => None,
    };
    SummaryRow {
        estimator,
        n,
        failed: errors.len() - n,
        mean,
        stderr,
    }
}

fn run_estimator(
    est: Estimator,
    problem: &ProblemInstance,
    target: &StudyData,
    sources: &[StudyData],
    cfg: &ExperimentConfig,
    rep_seed: u64,
) -> Result<crate::linalg::Matrix> {
    let baseline = BaselineConfig {
        admm: cfg.fit.admm,
        grid: cfg.fit.lambda_m_grid.clone(),
        grid_spec: cfg.fit.grid_spec,
        zero_tol: cfg.fit.omega_zero_tol,
    };
    Ok(match est {
        Estimator::GlassoTarget => glasso_target(problem, &baseline)?.estimate.omega,
        Estimator::GlassoPooled => glasso_pooled(problem, &baseline)?.estimate.omega,
        Estimator::TransGlasso => trans_glasso(problem, &cfg.fit)?.omega0,
        Estimator::TransGlassoCv => {
            let cv = CvConfig {
                folds: cfg.folds,
                seed: derive_seed(rep_seed, &[u64::MAX]),
                center: false,
                fit: cfg.fit.clone(),
            };
            trans_glasso_cv(target, sources, &cv)?.omega0
        }
    })
}

fn run_repetition(cfg: &ExperimentConfig, rep: usize) -> Vec<ReportRow> {
    let rep_seed = derive_seed(cfg.seed, &[rep as u64]);
    let row = |estimator, frob_error| ReportRow {
        model: cfg.model,
        design: cfg.design.clone(),
        rep,
        estimator,
        frob_error,
    };
    let setup = (|| -> Result<_> {
        let truth = gen_model(cfg.model, cfg.d, cfg.k, &cfg.h, derive_seed(rep_seed, &[0]))?;
        let mut studies = Vec::with_capacity(cfg.k + 1);
        for (s, omega) in truth.precisions.iter().enumerate() {
            let n = if s == 0 { cfg.n0 } else { cfg.n_source };
            let mut data = sample_gaussian(omega, n, derive_seed(rep_seed, &[1, s as u64]))?;
            data.study_id = s;
            studies.push(data);
        }
        let target = studies.remove(0);
        let problem = ProblemInstance::from_covariances(
            sample_covariance(&target, false)?,
            studies
                .iter()
                .map(|s| sample_covariance(s, false))
                .collect::<Result<_>>()?,
        )?;
        Ok((truth, target, studies, problem))
    })();
    let (truth, target, sources, problem) = match setup {
        Ok(v) => v,
        Err(e) => {
            log::warn!("repetition {rep}: data generation failed: {e}");
            return cfg.estimators.iter().map(|&e| row(e, None)).collect();
        }
    };
    cfg.estimators
        .iter()
        .map(|&est| {
            let err = run_estimator(est, &problem, &target, &sources, cfg, rep_seed)
                .and_then(|omega| frob_error(&omega, &truth.precisions[0]));
            match err {
                Ok(v) => row(est, Some(v)),
                Err(e) => {
                    log::warn!("repetition {rep}: {est} failed: {e}");
                    row(est, None)
                }
            }
        })
        .collect()
}

/// Run every repetition and estimator. Rows are ordered by repetition, then
/// by the order of `config.estimators`. Estimator failures are recorded as
/// missing values.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let rows: Vec<ReportRow> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(config, rep))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let summary = config
        .estimators
        .iter()
        .map(|&e| {
            let errs: Vec<Option<f64>> = rows.iter().filter(|r| r.estimator == e).map(|r| r.frob_error).collect();
            summarize(e, &errs)
        })
        .collect();
    Ok(Report { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(ModelId::I, 8, 1, 40, 80, vec![2]);
        cfg.fit.grid_spec.count = 6;
        cfg
    }

    #[test]
    fn single_rep_single_estimator() {
        let mut cfg = small();
        cfg.estimators = vec![Estimator::GlassoTarget];
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].frob_error.unwrap() > 0.0);
        assert_eq!(report.summary[0].stderr, None);
    }

    #[test]
    fn summary_matches_hand_computation() {
        let errs = [Some(1.0), Some(2.0), None, Some(4.0)];
        let s = summarize(Estimator::TransGlasso, &errs);
        assert_eq!((s.n, s.failed), (3, 1));
        let mean = 7.0 / 3.0;
        assert!((s.mean.unwrap() - mean).abs() < 1e-15);
        let var = ((1.0 - mean) * (1.0 - mean) + (2.0 - mean) * (2.0 - mean) + (4.0 - mean) * (4.0 - mean)) / 2.0;
        assert!((s.stderr.unwrap() - (var / 3.0_f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn experiment_is_deterministic() {
        let mut cfg = small();
        cfg.repetitions = 2;
        cfg.seed = 11;
        let a = run_experiment(&cfg).unwrap();
        assert_eq!(a, run_experiment(&cfg).unwrap());
        assert_eq!(a.rows.len(), 6);
        for e in &cfg.estimators {
            let s = a.summary_for(*e).unwrap();
            let errs = a.errors(*e);
            assert_eq!(s.mean.unwrap(), errs.iter().flatten().sum::<f64>() / 2.0);
        }
    }

    #[test]
    fn csv_layout() {
        let mut cfg = small();
        cfg.estimators = vec![Estimator::GlassoTarget];
        let report = run_experiment(&cfg).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("model,design,rep,estimator,frob_error"));
        assert!(lines.next().unwrap().starts_with("I,custom,0,glasso-target,"));
    }

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            assert!(cfg.validate().is_ok(), "{name}");
        }
        assert!(matches!(ExperimentConfig::preset("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
    }
}
