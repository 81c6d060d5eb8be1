//! Dense SPD helpers: a pivot-checked Cholesky factorization with an
//! optional one-shot diagonal jitter, and a few small matrix utilities.

use nalgebra::{DMatrix, DVector};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
}

/// Result of a factorization that may have needed a diagonal shift.
#[derive(Debug, Clone)]
pub struct Factored {
    pub factor: CholeskyFactor,
    /// Diagonal shift that was added, zero when the first attempt succeeded.
    pub jitter: f64,
}

/// Position of the first pivot that was not safely positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PivotFailure {
    pub column: usize,
}

impl CholeskyFactor {
    /// Factorizes a symmetric matrix, reading only its lower triangle.
    ///
    /// A pivot is rejected when it is not finite or falls below
    /// `n · ε · max(diag)`, which catches numerically rank-deficient input
    /// instead of returning a factor full of huge entries.
    pub fn new(a: &DMatrix<f64>) -> Result<Self, PivotFailure> {
        assert!(a.is_square(), "Cholesky of a non-square matrix");
        let n = a.nrows();
        let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0_f64, f64::max);
        let floor = (n.max(1) as f64) * f64::EPSILON * max_diag;
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !d.is_finite() || d <= floor || d <= 0.0 {
                return Err(PivotFailure { column: j });
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut v = a[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / ljj;
            }
        }
        Ok(CholeskyFactor { lower: l })
    }

    /// Factorizes `a`; on failure retries once with `a + jitter·I`.
    pub fn with_jitter(a: &DMatrix<f64>, jitter: f64) -> Result<Factored, PivotFailure> {
        match Self::new(a) {
            Ok(factor) => Ok(Factored { factor, jitter: 0.0 }),
            Err(first) => {
                if !(jitter > 0.0) || !jitter.is_finite() {
                    return Err(first);
                }
                let shifted = a + DMatrix::<f64>::identity(a.nrows(), a.ncols()) * jitter;
                let factor = Self::new(&shifted)?;
                Ok(Factored { factor, jitter })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Solves `A x = b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("factor has a non-zero diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("factor has a non-zero diagonal")
    }

    /// Solves `A X = B` column by column.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("factor has a non-zero diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("factor has a non-zero diagonal")
    }

    /// Solves `L y = b` (half solve), used for quadratic forms.
    pub fn half_solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("factor has a non-zero diagonal")
    }

    /// `A⁻¹` obtained from triangular solves against the identity.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        symmetrize(&self.solve_mat(&DMatrix::identity(n, n)))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `xᵀ A⁻¹ x`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        self.half_solve_vec(x).norm_squared()
    }

    /// Squared ratio of the smallest to the largest pivot; a cheap
    /// reciprocal condition estimate.
    pub fn rcond_estimate(&self) -> f64 {
        let d = self.lower.diagonal();
        let max = d.iter().cloned().fold(0.0_f64, f64::max);
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        if max == 0.0 {
            0.0
        } else {
            (min / max).powi(2)
        }
    }
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn is_symmetric(a: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = max_abs(a);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    symmetrize(a)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Replaces negative eigenvalues of a symmetric matrix by zero. Returns the
/// input unchanged when it is already PSD.
pub fn clamp_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(a);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    symmetrize(&(q * DMatrix::from_diagonal(&clamped) * q.transpose()))
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Row-major flattening, the layout used by every file format here.
pub fn to_row_major(a: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.push(a[(i, j)]);
        }
    }
    out
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Option<DMatrix<f64>> {
    (data.len() == rows * cols).then(|| DMatrix::from_row_slice(rows, cols, data))
}
