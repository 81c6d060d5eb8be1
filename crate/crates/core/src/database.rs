//! The reference database `{s_n, μ̂_n, Σ̂_n}` that parameterizes a KMP.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, KmpError, Result};
use crate::linalg::{is_symmetric, max_abs, min_eigenvalue, symmetrize};

/// Lower bound on eigenvalues accepted for a reference covariance, relative
/// to its largest entry. Entries are PSD, not necessarily PD: a zero
/// covariance pins the trajectory exactly and is legal here.
const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEntry {
    pub input: DVector<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ReferenceEntry {
    pub fn new(input: DVector<f64>, mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        ReferenceEntry { input, mean, cov }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDatabase {
    entries: Vec<ReferenceEntry>,
    input_dim: usize,
    output_dim: usize,
}

impl ReferenceDatabase {
    /// Validates shapes, finiteness, symmetry and positive semi-definiteness
    /// of every entry. Duplicate inputs are allowed here; they are rejected
    /// when extracting from a GMM and diagnosed when building a model.
    pub fn new(entries: Vec<ReferenceEntry>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| KmpError::validation("reference database is empty"))?;
        let input_dim = first.input.len();
        let output_dim = first.mean.len();
        if input_dim == 0 || output_dim == 0 {
            return Err(KmpError::validation("reference entries need non-empty inputs and outputs"));
        }
        let mut entries = entries;
        for (n, e) in entries.iter_mut().enumerate() {
            check_dim("reference input", input_dim, e.input.len())?;
            check_dim("reference mean", output_dim, e.mean.len())?;
            check_dim("reference covariance rows", output_dim, e.cov.nrows())?;
            check_dim("reference covariance columns", output_dim, e.cov.ncols())?;
            if e.input.iter().chain(e.mean.iter()).chain(e.cov.iter()).any(|v| !v.is_finite()) {
                return Err(KmpError::validation(format!("entry {n} has non-finite values")));
            }
            if !is_symmetric(&e.cov, 1e-9) {
                return Err(KmpError::validation(format!("entry {n} covariance is not symmetric")));
            }
            e.cov = symmetrize(&e.cov);
            let scale = max_abs(&e.cov);
            if min_eigenvalue(&e.cov) < -PSD_TOL * scale.max(f64::MIN_POSITIVE) {
                return Err(KmpError::NotPositiveDefinite {
                    context: format!("reference entry {n} covariance"),
                });
            }
        }
        Ok(ReferenceDatabase {
            entries,
            input_dim,
            output_dim,
        })
    }

    pub fn entries(&self) -> &[ReferenceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn inputs(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.entries.iter().map(|e| &e.input)
    }

    /// First pair of entries whose inputs coincide exactly, if any.
    pub fn duplicate_inputs(&self) -> Option<(usize, usize)> {
        for i in 0..self.entries.len() {
            for j in (i + 1)..self.entries.len() {
                if self.entries[i].input == self.entries[j].input {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Stacked means `μ = [μ̂_1; …; μ̂_N]`.
    pub fn stacked_means(&self) -> DVector<f64> {
        let o = self.output_dim;
        let mut mu = DVector::zeros(self.len() * o);
        for (n, e) in self.entries.iter().enumerate() {
            mu.rows_mut(n * o, o).copy_from(&e.mean);
        }
        mu
    }

    /// Returns a copy with every mean multiplied by `alpha`.
    pub fn scaled_means(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.mean *= alpha;
        }
        out
    }

    pub(crate) fn with_replaced(&self, index: usize, entry: ReferenceEntry) -> Self {
        let mut out = self.clone();
        out.entries[index] = entry;
        out
    }

    pub(crate) fn with_appended(&self, entry: ReferenceEntry) -> Self {
        let mut out = self.clone();
        out.entries.push(entry);
        out
    }

    /// Linearly interpolates a scalar-input database onto `grid`. Means and
    /// covariances are blended between the two bracketing entries (inputs
    /// sorted ascending); queries outside the covered interval take the
    /// nearest end entry.
    pub fn resample(&self, grid: &[f64]) -> Result<Self> {
        if self.input_dim != 1 {
            return Err(KmpError::validation("resampling needs a scalar (time) input"));
        }
        if grid.is_empty() {
            return Err(KmpError::validation("resampling grid is empty"));
        }
        let mut sorted: Vec<&ReferenceEntry> = self.entries.iter().collect();
        sorted.sort_by(|a, b| a.input[0].total_cmp(&b.input[0]));
        let entries = grid
            .iter()
            .map(|&t| {
                let upper = sorted.partition_point(|e| e.input[0] < t);
                let (mean, cov) = if upper == 0 {
                    (sorted[0].mean.clone(), sorted[0].cov.clone())
                } else if upper == sorted.len() {
                    let last = sorted[sorted.len() - 1];
                    (last.mean.clone(), last.cov.clone())
                } else {
                    let (a, b) = (sorted[upper - 1], sorted[upper]);
                    let span = b.input[0] - a.input[0];
                    let w = if span > 0.0 { (t - a.input[0]) / span } else { 0.0 };
                    (
                        &a.mean * (1.0 - w) + &b.mean * w,
                        &a.cov * (1.0 - w) + &b.cov * w,
                    )
                };
                ReferenceEntry::new(DVector::from_element(1, t), mean, cov)
            })
            .collect();
        ReferenceDatabase::new(entries)
    }
}
