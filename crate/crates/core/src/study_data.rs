//! Per-study sample matrices, sample covariances and the multi-study problem.
//!
//! Covariances use the `1/n` normalization in both the raw and the centered
//! mode, so `Σ̂ = (1/n) Σᵢ xᵢxᵢᵀ` when the data are taken to be zero-mean.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// One study's observations: rows are samples, columns are variables.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyData {
    samples: Matrix,
    /// `0` is the target, `1..=K` are sources.
    pub study_id: usize,
}

impl StudyData {
    pub fn new(samples: Matrix, study_id: usize) -> Result<Self> {
        if samples.nrows() < 2 {
            return Err(Error::Dimension(format!(
                "a study needs at least 2 observations, got {}",
                samples.nrows()
            )));
        }
        if samples.ncols() < 1 {
            return Err(Error::Dimension("a study needs at least 1 variable".into()));
        }
        if !linalg::is_finite(&samples) {
            return Err(Error::Numeric("study contains non-finite entries".into()));
        }
        Ok(Self { samples, study_id })
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn d(&self) -> usize {
        self.samples.ncols()
    }

    /// Keep only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let d = self.d();
        let sub = DMatrix::from_fn(rows.len(), d, |i, j| self.samples[(rows[i], j)]);
        Self::new(sub, self.study_id)
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.d())
            .map(|j| self.samples.column(j).iter().sum::<f64>() / n)
            .collect()
    }
}

/// A sample covariance matrix together with the sample count behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub matrix: Matrix,
    pub n: usize,
}

impl CovMatrix {
    /// Wrap an existing symmetric matrix (e.g. a population covariance).
    pub fn new(matrix: Matrix, n: usize) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension("covariance must be square".into()));
        }
        if !linalg::is_finite(&matrix) {
            return Err(Error::Numeric("covariance contains non-finite entries".into()));
        }
        let scale = linalg::max_abs(&matrix).max(1.0);
        if linalg::asymmetry(&matrix) > 1e-10 * scale {
            return Err(Error::Contract("covariance is not symmetric".into()));
        }
        let mut matrix = matrix;
        linalg::symmetrize_in_place(&mut matrix);
        let cov = Self { matrix, n };
        if let Some(gap) = cov.psd_violation() {
            log::warn!("covariance has eigenvalue {gap:e} below the PSD tolerance");
        }
        Ok(cov)
    }

    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }

    /// Minimum eigenvalue if it falls below `-1e-10 · max(1, λ_max)`.
    pub fn psd_violation(&self) -> Option<f64> {
        let eig = linalg::sym_eigenvalues(&self.matrix);
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (min < -1e-10 * max.max(1.0)).then_some(min)
    }
}

/// Target and source covariances with their pooling weights `α_k = n_k / N`.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub target_cov: CovMatrix,
    pub source_covs: Vec<CovMatrix>,
    /// `weights[0]` is the target weight, `weights[k]` belongs to source `k`.
    pub weights: Vec<f64>,
    pub total_n: usize,
}

impl ProblemInstance {
    /// Assemble a problem from precomputed covariances.
    pub fn from_covariances(target_cov: CovMatrix, source_covs: Vec<CovMatrix>) -> Result<Self> {
        let d = target_cov.d();
        if d == 0 {
            return Err(Error::Dimension("empty covariance".into()));
        }
        for (k, s) in source_covs.iter().enumerate() {
            if s.d() != d {
                return Err(Error::Dimension(format!(
                    "source {} has dimension {}, target has {d}",
                    k + 1,
                    s.d()
                )));
            }
        }
        let counts: Vec<usize> = std::iter::once(target_cov.n)
            .chain(source_covs.iter().map(|c| c.n))
            .collect();
        if counts.contains(&0) {
            return Err(Error::Dimension("every study needs a positive sample count".into()));
        }
        let total_n: usize = counts.iter().sum();
        let weights = counts.iter().map(|&n| n as f64 / total_n as f64).collect();
        Ok(Self {
            target_cov,
            source_covs,
            weights,
            total_n,
        })
    }

    pub fn d(&self) -> usize {
        self.target_cov.d()
    }

    /// Number of sources `K`.
    pub fn num_sources(&self) -> usize {
        self.source_covs.len()
    }

    /// Covariance of study `k` (0 = target).
    pub fn cov(&self, k: usize) -> &CovMatrix {
        if k == 0 {
            &self.target_cov
        } else {
            &self.source_covs[k - 1]
        }
    }

    /// All `K + 1` covariances, target first.
    pub fn covs(&self) -> impl Iterator<Item = &CovMatrix> {
        std::iter::once(&self.target_cov).chain(self.source_covs.iter())
    }

    /// Restrict to the target plus the listed sources (1-based ids); weights are recomputed.
    pub fn with_sources(&self, sources: &[usize]) -> Result<Self> {
        let covs = sources
            .iter()
            .map(|&k| {
                if k == 0 || k > self.num_sources() {
                    Err(Error::Contract(format!("source index {k} out of range")))
                } else {
                    Ok(self.source_covs[k - 1].clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_covariances(self.target_cov.clone(), covs)
    }

    /// Weighted average `Σ_k α_k Σ̂ᵏ` as a single study with `N` samples.
    pub fn pooled_cov(&self) -> CovMatrix {
        let d = self.d();
        let mut pooled = Matrix::zeros(d, d);
        for (w, c) in self.weights.iter().zip(self.covs()) {
            pooled += &c.matrix * *w;
        }
        linalg::symmetrize_in_place(&mut pooled);
        CovMatrix {
            matrix: pooled,
            n: self.total_n,
        }
    }
}

/// Read a comma-separated numeric file, one observation per row.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<StudyData> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let row = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse {
                path: path.to_path_buf(),
                row,
                column: 0,
                message: e.to_string(),
            }
        })?;
        let row = record.position().map(|p| p.line()).unwrap_or(rows as u64 + 1);
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: record.len().min(w) + 1,
                    message: format!("expected {w} columns, found {}", record.len()),
                });
            }
            _ => {}
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: j + 1,
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: j + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    let d = width.unwrap_or(0);
    if rows < 2 || d == 0 {
        return Err(Error::Dimension(format!(
            "{}: need at least 2 rows and 1 column, found {rows} rows",
            path.display()
        )));
    }
    StudyData::new(DMatrix::from_row_slice(rows, d, &values), 0)
}

/// `(1/n) Σᵢ xᵢxᵢᵀ`, after subtracting column means when `center` is set.
pub fn sample_covariance(data: &StudyData, center: bool) -> Result<CovMatrix> {
    let n = data.n();
    if n < 2 {
        return Err(Error::Dimension(format!("need at least 2 samples, got {n}")));
    }
    let x = if center {
        let means = data.column_means();
        let mut x = data.samples().clone();
        for (j, m) in means.iter().enumerate() {
            x.column_mut(j).add_scalar_mut(-m);
        }
        x
    } else {
        data.samples().clone()
    };
    let mut cov = x.tr_mul(&x) / n as f64;
    linalg::symmetrize_in_place(&mut cov);
    CovMatrix::new(cov, n)
}

/// Compute every study's covariance and the pooling weights.
pub fn build_problem(target: &StudyData, sources: &[StudyData], center: bool) -> Result<ProblemInstance> {
    let d = target.d();
    for (k, s) in sources.iter().enumerate() {
        if s.d() != d {
            return Err(Error::Dimension(format!(
                "source {} has {} variables, target has {d}",
                k + 1,
                s.d()
            )));
        }
    }
    let target_cov = sample_covariance(target, center)?;
    let source_covs = sources
        .iter()
        .map(|s| sample_covariance(s, center))
        .collect::<Result<Vec<_>>>()?;
    ProblemInstance::from_covariances(target_cov, source_covs)
}
