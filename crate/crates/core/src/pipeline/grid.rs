use serde::Serialize;

use crate::error::{Error, Result};

/// Candidate penalties, strictly decreasing and positive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningGrid {
    values: Vec<f64>,
}

impl TuningGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("tuning grid is empty".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("grid values must be positive: {values:?}")));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!("grid must be strictly decreasing: {values:?}")));
        }
        Ok(Self { values })
    }

    /// Sort descending and drop duplicates before validating.
    pub fn from_unsorted(mut values: Vec<f64>) -> Result<Self> {
        values.sort_by(|a, b| b.total_cmp(a));
        values.dedup();
        Self::new(values)
    }

    /// `count` log-spaced values from `max` down to `max · ratio`.
    pub fn log_spaced(max: f64, ratio: f64, count: usize) -> Result<Self> {
        if !(max.is_finite() && max > 0.0 && ratio > 0.0 && ratio < 1.0) || count == 0 {
            return Err(Error::Config(format!(
                "cannot build a log grid from max = {max}, ratio = {ratio}, count = {count}"
            )));
        }
        if count == 1 {
            return Self::new(vec![max]);
        }
        let step = ratio.ln() / (count - 1) as f64;
        Self::new((0..count).map(|i| max * (step * i as f64).exp()).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How a sweep obtains its candidate penalties.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum GridChoice {
    /// Data-driven log grid, see [`GridSpec`].
    #[default]
    Auto,
    Explicit(TuningGrid),
}

/// Shape of automatically generated grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub count: usize,
    pub ratio: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { count: 30, ratio: 1e-3 }
    }
}

impl GridChoice {
    /// Resolve against the data-driven upper end `lambda_max`.
    pub fn resolve(&self, lambda_max: f64, spec: GridSpec) -> Result<TuningGrid> {
        match self {
            GridChoice::Explicit(g) => Ok(g.clone()),
            GridChoice::Auto => {
                // Degenerate data (e.g. identical studies): every positive λ is equivalent.
                let top = if lambda_max > 0.0 && lambda_max.is_finite() {
                    lambda_max
                } else {
                    1.0
                };
                TuningGrid::log_spaced(top, spec.ratio, spec.count)
            }
        }
    }
}

/// Index of the smallest finite criterion; ties keep the earliest (largest λ).
pub(crate) fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            Some(b) if values[b] <= *v => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_endpoints() {
        let g = TuningGrid::log_spaced(2.0, 1e-3, 30).unwrap();
        assert_eq!(g.len(), 30);
        assert_eq!(g.values()[0], 2.0);
        assert!((g.values()[29] - 2e-3).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TuningGrid::new(vec![]).is_err());
        assert!(TuningGrid::new(vec![1.0, 1.0]).is_err());
        assert!(TuningGrid::new(vec![0.5, 1.0]).is_err());
        assert!(TuningGrid::new(vec![1.0, -1.0]).is_err());
        assert_eq!(
            TuningGrid::from_unsorted(vec![0.1, 1.0, 0.1]).unwrap().values(),
            &[1.0, 0.1]
        );
    }

    #[test]
    fn argmin_prefers_earliest_tie() {
        assert_eq!(argmin_first(&[3.0, 1.0, 1.0]), Some(1));
        assert_eq!(argmin_first(&[f64::INFINITY, 2.0]), Some(1));
        assert_eq!(argmin_first(&[f64::INFINITY]), None);
    }
}
