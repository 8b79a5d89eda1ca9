//! Synthetic ground truth and Gaussian sampling for the simulation studies.
//!
//! Every precision matrix has the form `Ωᵏ = Ω̃ + Γᵏ + σI`: a shared sparse
//! component, a study-specific component on positions disjoint from the
//! shared support, and one common diagonal shift making every `Ωᵏ` have
//! minimum eigenvalue at least `0.1`.
//!
//! Randomness comes from `ChaCha8Rng` (rand_chacha 0.3) seeded with
//! `seed_from_u64`; normals are drawn with `rand_distr::StandardNormal`.
//! Both are portable, so identical seeds produce identical output on every
//! platform.

pub mod experiment;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::study_data::StudyData;

pub use experiment::{Estimator, ExperimentConfig, Report, ReportRow, SummaryRow, run_experiment};

/// Minimum eigenvalue guaranteed for every generated precision matrix.
pub const MIN_EIGENVALUE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    /// Banded shared component, bandwidth 1.
    I,
    /// Banded shared component, bandwidth 5.
    II,
    /// Erdős–Rényi shared component.
    III,
}

impl ModelId {
    fn bandwidth(self) -> Option<usize> {
        match self {
            ModelId::I => Some(1),
            ModelId::II => Some(5),
            ModelId::III => None,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelId::I => "I",
            ModelId::II => "II",
            ModelId::III => "III",
        })
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(ModelId::I),
            "II" | "2" => Ok(ModelId::II),
            "III" | "3" => Ok(ModelId::III),
            other => Err(Error::Config(format!("unknown model {other:?}, expected I, II or III"))),
        }
    }
}

/// Generated precision matrices with their decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub model: ModelId,
    /// Shared component `Ω̃` (before the diagonal shift).
    pub shared: Matrix,
    /// `Γᵏ` for `k = 0..=K`.
    pub uniques: Vec<Matrix>,
    /// `Ωᵏ = Ω̃ + Γᵏ + σI`.
    pub precisions: Vec<Matrix>,
    pub sigma_offset: f64,
    pub h_per_study: Vec<usize>,
    pub seed: u64,
}

impl GroundTruth {
    pub fn d(&self) -> usize {
        self.shared.nrows()
    }

    /// Population covariances `(Ωᵏ)⁻¹`.
    pub fn covariances(&self) -> Result<Vec<Matrix>> {
        self.precisions.iter().map(linalg::inverse_spd).collect()
    }

    /// `Ψᵏ = Ωᵏ − Ω⁰`.
    pub fn diff_network(&self, k: usize) -> Matrix {
        &self.precisions[k] - &self.precisions[0]
    }
}

/// Off-diagonal upper-triangle positions eligible for unique entries.
fn unique_candidates(model: ModelId, shared: &Matrix) -> Vec<(usize, usize)> {
    let d = shared.nrows();
    match model.bandwidth() {
        Some(bw) => {
            let half = d / 2;
            let mut out = Vec::new();
            for i in 0..half {
                for j in half..d {
                    // Skip the few block positions that fall inside the band.
                    if j - i > bw {
                        out.push((i, j));
                    }
                }
            }
            out
        }
        None => {
            let mut out = Vec::new();
            for i in 0..d {
                for j in (i + 1)..d {
                    if shared[(i, j)] == 0.0 {
                        out.push((i, j));
                    }
                }
            }
            out
        }
    }
}

fn shared_component(model: ModelId, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    match model.bandwidth() {
        Some(bw) => Matrix::from_fn(d, d, |i, j| {
            let gap = i.abs_diff(j);
            if gap <= bw { 5.0 * 0.6_f64.powi(gap as i32) } else { 0.0 }
        }),
        None => {
            let mut m = Matrix::identity(d, d) * 5.0;
            for i in 0..d {
                for j in (i + 1)..d {
                    if rng.gen_bool(0.02) {
                        let w = rng.gen_range(-3.0..=3.0);
                        m[(i, j)] = w;
                        m[(j, i)] = w;
                    }
                }
            }
            m
        }
    }
}

/// Generate a ground truth for `K` sources; `h` holds one sparsity level for
/// every study or one per study (`K + 1` values, target first).
pub fn gen_model(model: ModelId, d: usize, k: usize, h: &[usize], seed: u64) -> Result<GroundTruth> {
    if d < 2 {
        return Err(Error::Config(format!("dimension must be at least 2, got {d}")));
    }
    let h_per_study: Vec<usize> = match h.len() {
        1 => vec![h[0]; k + 1],
        n if n == k + 1 => h.to_vec(),
        n => {
            return Err(Error::Config(format!(
                "expected 1 or {} sparsity levels, got {n}",
                k + 1
            )));
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared = shared_component(model, d, &mut rng);
    let candidates = unique_candidates(model, &shared);

    let mut uniques = Vec::with_capacity(k + 1);
    for (study, &hk) in h_per_study.iter().enumerate() {
        let pairs = hk.div_ceil(2);
        if pairs > candidates.len() {
            return Err(Error::Config(format!(
                "h = {hk} for study {study} needs {pairs} positions, only {} available at d = {d}",
                candidates.len()
            )));
        }
        let mut gamma = Matrix::zeros(d, d);
        for idx in index::sample(&mut rng, candidates.len(), pairs) {
            let (i, j) = candidates[idx];
            let w = rng.gen_range(-3.0..=3.0);
            gamma[(i, j)] = w;
            gamma[(j, i)] = w;
        }
        uniques.push(gamma);
    }

    let min_gap = uniques
        .iter()
        .map(|g| linalg::min_eigenvalue(&(&shared + g)))
        .fold(f64::INFINITY, f64::min);
    let sigma_offset = (MIN_EIGENVALUE - min_gap).max(0.0);
    let shift = Matrix::identity(d, d) * sigma_offset;
    let precisions = uniques.iter().map(|g| &shared + g + &shift).collect();

    Ok(GroundTruth {
        model,
        shared,
        uniques,
        precisions,
        sigma_offset,
        h_per_study,
        seed,
    })
}

/// Draw `n` samples from `N(0, Ω⁻¹)`: with `Ω = LLᵀ`, each row is `zᵀL⁻¹`
/// for a standard normal `z`.
pub fn sample_gaussian(omega: &Matrix, n: usize, seed: u64) -> Result<StudyData> {
    let d = omega.nrows();
    if !omega.is_square() || d == 0 {
        return Err(Error::Dimension("precision matrix must be square and non-empty".into()));
    }
    if linalg::asymmetry(omega) > 1e-10 * linalg::max_abs(omega).max(1.0) {
        return Err(Error::Numeric("precision matrix is not symmetric".into()));
    }
    let chol = omega
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("precision matrix is not positive definite".into()))?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&Matrix::identity(d, d))
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(n, d, |_, _| 0.0).map(|_: f64| rng.sample::<f64, _>(StandardNormal));
    StudyData::new(z * l_inv, 0)
}

/// `‖estimate − truth‖_F`.
pub fn frob_error(estimate: &Matrix, truth: &Matrix) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, truth is {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    Ok(linalg::frobenius_diff_sq(estimate, truth).sqrt())
}

/// Mix a base seed with a stream path (SplitMix64 finalizer per step) so that
/// every repetition and study gets an independent, order-free seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}
