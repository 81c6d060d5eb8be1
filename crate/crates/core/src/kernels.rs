//! Kernel evaluation and block kernel matrices.
//!
//! A plain model uses `k(s_i, s_j)·I_O` blocks. A time-driven model encodes
//! position and velocity jointly; its `2O×2O` blocks hold finite-difference
//! approximations of the kernel derivatives:
//!
//! ```text
//! k_tt = k(t_i, t_j)
//! k_td = (k(t_i, t_j+δ) − k(t_i, t_j)) / δ
//! k_dt = (k(t_i+δ, t_j) − k(t_i, t_j)) / δ
//! k_dd = (k(t_i+δ, t_j+δ) − k(t_i+δ, t_j) − k(t_i, t_j+δ) + k(t_i, t_j)) / δ²
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, KmpError, Result};

/// Default finite-difference step for derivative blocks.
pub const DEFAULT_DELTA: f64 = 1e-5;

/// Largest step accepted in a [`KernelSpec`].
pub const MAX_DELTA: f64 = 1e-3;

/// A positive semi-definite kernel on input vectors.
///
/// Implementors only provide the scalar kernel; block assembly is shared.
pub trait Kernel {
    /// `k(a, b)`; callers guarantee equal lengths.
    fn value(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64;

    /// Finite-difference step when the kernel is used in time-driven
    /// (position + velocity) mode.
    fn derivative_delta(&self) -> Option<f64> {
        None
    }

    /// Validates the kernel's own parameters.
    fn check(&self) -> Result<()> {
        Ok(())
    }

    /// Derivative-block entries at step `delta`. The default evaluates the
    /// difference quotients literally; kernels with a closed form can
    /// override this to avoid cancellation in the second difference.
    fn difference_entries(&self, t_i: f64, t_j: f64, delta: f64) -> TimeKernelEntries {
        time_entries(self, t_i, t_j, delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
}

/// Kernel configuration: `k(s_i, s_j) = exp(−ℓ‖s_i − s_j‖²)`.
///
/// Note that `ℓ` multiplies the squared distance; larger values give a
/// narrower kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub length_scale: f64,
    pub derivative_mode: bool,
    pub delta: f64,
}

impl KernelSpec {
    pub fn gaussian(length_scale: f64) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::Gaussian,
            length_scale,
            derivative_mode: false,
            delta: DEFAULT_DELTA,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Gaussian kernel in time-driven mode with finite-difference step `delta`.
    pub fn time_driven(length_scale: f64, delta: f64) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::Gaussian,
            length_scale,
            derivative_mode: true,
            delta,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(KmpError::validation(format!(
                "kernel length scale must be positive, got {}",
                self.length_scale
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(KmpError::validation(format!("kernel delta must be positive, got {}", self.delta)));
        }
        if self.derivative_mode && self.delta > MAX_DELTA {
            return Err(KmpError::validation(format!(
                "kernel delta {} exceeds {MAX_DELTA}; finite-difference bias would dominate",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn eval(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        check_dim("kernel arguments", a.len(), b.len())?;
        Ok(self.value(a, b))
    }

    /// `k(s_i, s_j)·I_O`; only defined outside derivative mode.
    pub fn block(&self, a: &DVector<f64>, b: &DVector<f64>, output_dim: usize) -> Result<DMatrix<f64>> {
        if self.derivative_mode {
            return Err(KmpError::validation("block() called on a time-driven kernel; use time_block()"));
        }
        Ok(DMatrix::identity(output_dim, output_dim) * self.eval(a, b)?)
    }

    /// The `2O×2O` position/velocity block for scalar times.
    pub fn time_block(&self, t_i: f64, t_j: f64, output_dim: usize) -> Result<DMatrix<f64>> {
        if !self.derivative_mode {
            return Err(KmpError::validation("time_block() needs derivative_mode"));
        }
        Ok(self.difference_entries(t_i, t_j, self.delta).to_block(output_dim))
    }
}

impl Kernel for KernelSpec {
    fn value(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                (-self.length_scale * d2).exp()
            }
        }
    }

    fn derivative_delta(&self) -> Option<f64> {
        self.derivative_mode.then_some(self.delta)
    }

    fn check(&self) -> Result<()> {
        self.validate()
    }

    /// The same difference quotients as [`time_entries`], rewritten with
    /// `expm1`/`sinh` so that no two nearly equal kernel values are
    /// subtracted. With `d = t_i − t_j`, `a = 2ℓdδ`, `b = ℓδ²`:
    ///
    /// ```text
    /// k_td = k·expm1(a − b)/δ
    /// k_dt = k·expm1(−a − b)/δ
    /// k_dd = −2k·(expm1(−b)·cosh(a) + 2sinh²(a/2))/δ²
    /// ```
    fn difference_entries(&self, t_i: f64, t_j: f64, delta: f64) -> TimeKernelEntries {
        match self.family {
            KernelFamily::Gaussian => {
                let l = self.length_scale;
                let d = t_i - t_j;
                let k = (-l * d * d).exp();
                let a = 2.0 * l * d * delta;
                let b = l * delta * delta;
                let h = (0.5 * a).sinh();
                TimeKernelEntries {
                    tt: k,
                    td: k * (a - b).exp_m1() / delta,
                    dt: k * (-a - b).exp_m1() / delta,
                    dd: -2.0 * k * ((-b).exp_m1() * a.cosh() + 2.0 * h * h) / (delta * delta),
                }
            }
        }
    }
}

/// The four scalar entries of a time-driven kernel block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeKernelEntries {
    pub tt: f64,
    pub td: f64,
    pub dt: f64,
    pub dd: f64,
}

impl TimeKernelEntries {
    pub fn to_block(&self, output_dim: usize) -> DMatrix<f64> {
        let o = output_dim;
        let mut m = DMatrix::zeros(2 * o, 2 * o);
        for i in 0..o {
            m[(i, i)] = self.tt;
            m[(i, o + i)] = self.td;
            m[(o + i, i)] = self.dt;
            m[(o + i, o + i)] = self.dd;
        }
        m
    }
}

/// Finite-difference derivative entries for any scalar-input kernel. The
/// step is not range-checked here so convergence studies can use larger
/// values than [`KernelSpec`] accepts.
pub fn time_entries<K: Kernel + ?Sized>(kernel: &K, t_i: f64, t_j: f64, delta: f64) -> TimeKernelEntries {
    let s = |t: f64| DVector::from_element(1, t);
    let k00 = kernel.value(&s(t_i), &s(t_j));
    let k01 = kernel.value(&s(t_i), &s(t_j + delta));
    let k10 = kernel.value(&s(t_i + delta), &s(t_j));
    let k11 = kernel.value(&s(t_i + delta), &s(t_j + delta));
    TimeKernelEntries {
        tt: k00,
        td: (k01 - k00) / delta,
        dt: (k10 - k00) / delta,
        dd: (k11 - k10 - k01 + k00) / (delta * delta),
    }
}

/// Size of one kernel block for base output dimension `o`.
pub fn block_size<K: Kernel + ?Sized>(kernel: &K, o: usize) -> usize {
    if kernel.derivative_delta().is_some() {
        2 * o
    } else {
        o
    }
}

fn write_block<K: Kernel + ?Sized>(
    kernel: &K,
    a: &DVector<f64>,
    b: &DVector<f64>,
    o: usize,
    out: &mut DMatrix<f64>,
    row: usize,
    col: usize,
) {
    match kernel.derivative_delta() {
        Some(delta) => {
            let e = kernel.difference_entries(a[0], b[0], delta);
            for i in 0..o {
                out[(row + i, col + i)] = e.tt;
                out[(row + i, col + o + i)] = e.td;
                out[(row + o + i, col + i)] = e.dt;
                out[(row + o + i, col + o + i)] = e.dd;
            }
        }
        None => {
            let v = kernel.value(a, b);
            for i in 0..o {
                out[(row + i, col + i)] = v;
            }
        }
    }
}

/// Block kernel matrix over all input pairs; `o` is the base output
/// dimension (blocks are `2o×2o` in derivative mode).
pub fn gram<K: Kernel + ?Sized>(kernel: &K, inputs: &[DVector<f64>], o: usize) -> DMatrix<f64> {
    let b = block_size(kernel, o);
    let n = inputs.len();
    let mut k = DMatrix::zeros(n * b, n * b);
    for i in 0..n {
        for j in 0..n {
            write_block(kernel, &inputs[i], &inputs[j], o, &mut k, i * b, j * b);
        }
    }
    k
}

/// Row of blocks `k* = [k(s*, s_1) … k(s*, s_N)]`.
pub fn cross<K: Kernel + ?Sized>(kernel: &K, query: &DVector<f64>, inputs: &[DVector<f64>], o: usize) -> DMatrix<f64> {
    let b = block_size(kernel, o);
    let mut k = DMatrix::zeros(b, inputs.len() * b);
    for (j, s) in inputs.iter().enumerate() {
        write_block(kernel, query, s, o, &mut k, 0, j * b);
    }
    k
}

/// Single block `k(s*, s*)`.
pub fn self_block<K: Kernel + ?Sized>(kernel: &K, query: &DVector<f64>, o: usize) -> DMatrix<f64> {
    let b = block_size(kernel, o);
    let mut k = DMatrix::zeros(b, b);
    write_block(kernel, query, query, o, &mut k, 0, 0);
    k
}
