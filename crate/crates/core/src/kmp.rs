//! The kernelized movement primitive predictor.
//!
//! A model caches the factorization of `K + λΣ`, where `K` is the block
//! kernel matrix over the reference inputs and `Σ = blockdiag(Σ̂_1 … Σ̂_N)`.
//! Predictions at `s*` are
//!
//! ```text
//! E[ξ(s*)]   = k* (K + λΣ)⁻¹ μ
//! cov[ξ(s*)] = (N/λ) (k(s*, s*) − k* (K + λΣ)⁻¹ k*ᵀ)
//! ```

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::database::{ReferenceDatabase, ReferenceEntry};
use crate::error::{check_dim, KmpError, Result};
use crate::gaussian::{Gaussian, SPD_REPAIR_SCALE};
use crate::kernels::{cross, gram, self_block, Kernel, KernelSpec};
use crate::linalg::{clamp_psd, from_row_major, min_eigenvalue, symmetrize, to_row_major, CholeskyFactor};

/// Version tag of the serialized model document.
pub const MODEL_VERSION: u32 = 1;

/// Variance given to the unconstrained velocity part of a position-only
/// desired point.
pub const FREE_VELOCITY_VARIANCE: f64 = 1e4;

/// Predicted mean and covariance at one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct KmpModel<K: Kernel = KernelSpec> {
    kernel: K,
    lambda: f64,
    database: ReferenceDatabase,
    inputs: Vec<DVector<f64>>,
    base_dim: usize,
    factor: CholeskyFactor,
    alpha: DVector<f64>,
    jitter: f64,
}

impl<K: Kernel + Clone> KmpModel<K> {
    /// Factorizes `K + λΣ` for `database`.
    ///
    /// Exact duplicate inputs are checked first so that a rank-deficient
    /// pair is reported by index instead of being hidden by jitter.
    pub fn build(database: ReferenceDatabase, kernel: K, lambda: f64) -> Result<Self> {
        kernel.check()?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(KmpError::validation(format!("lambda must be positive, got {lambda}")));
        }
        let out = database.output_dim();
        let base_dim = if kernel.derivative_delta().is_some() {
            if database.input_dim() != 1 {
                return Err(KmpError::validation("derivative mode needs a scalar time input"));
            }
            if out % 2 != 0 {
                return Err(KmpError::validation(format!(
                    "derivative mode needs [position; velocity] outputs, got dimension {out}"
                )));
            }
            out / 2
        } else {
            out
        };
        let inputs: Vec<DVector<f64>> = database.inputs().cloned().collect();
        let n = inputs.len();

        let mut system = gram(&kernel, &inputs, base_dim);
        for (i, e) in database.entries().iter().enumerate() {
            let mut block = system.view_mut((i * out, i * out), (out, out));
            block += &e.cov * lambda;
        }
        let system = symmetrize(&system);

        for i in 0..n {
            for j in (i + 1)..n {
                if inputs[i] == inputs[j] && !pair_factorizes(&system, out, i, j) {
                    return Err(KmpError::Factorization { first: i, second: j });
                }
            }
        }

        let jitter = SPD_REPAIR_SCALE * system.trace() / (n * out) as f64;
        let factored = CholeskyFactor::with_jitter(&system, jitter).map_err(|fail| {
            let second = fail.column / out;
            match nearest_earlier(&inputs, second) {
                Some(first) => KmpError::Factorization { first, second },
                None => KmpError::NotPositiveDefinite {
                    context: format!("K + lambda*Sigma at entry {second}"),
                },
            }
        })?;
        if factored.jitter > 0.0 {
            log::warn!("K + lambda*Sigma needed jitter {:e}", factored.jitter);
        }
        let alpha = factored.factor.solve_vec(&database.stacked_means());
        Ok(KmpModel {
            kernel,
            lambda,
            database,
            inputs,
            base_dim,
            factor: factored.factor,
            alpha,
            jitter: factored.jitter,
        })
    }

    /// Rebuilds with a different database, keeping kernel and λ.
    pub fn with_database(&self, database: ReferenceDatabase) -> Result<Self> {
        Self::build(database, self.kernel.clone(), self.lambda)
    }
}

impl<K: Kernel> KmpModel<K> {
    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn database(&self) -> &ReferenceDatabase {
        &self.database
    }

    pub fn input_dim(&self) -> usize {
        self.database.input_dim()
    }

    /// `O'`, the dimension of predicted outputs.
    pub fn output_dim(&self) -> usize {
        self.database.output_dim()
    }

    /// Diagonal shift that was needed to factorize, zero normally.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Dual weights `(K + λΣ)⁻¹ μ`.
    pub fn dual_weights(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn check_query(&self, query: &DVector<f64>) -> Result<()> {
        check_dim("query", self.input_dim(), query.len())?;
        if query.iter().any(|v| !v.is_finite()) {
            return Err(KmpError::validation("query has non-finite values"));
        }
        Ok(())
    }

    pub fn predict_mean(&self, query: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_query(query)?;
        Ok(cross(&self.kernel, query, &self.inputs, self.base_dim) * &self.alpha)
    }

    /// Full `O'×O'` predictive covariance. It is symmetrized and, only if
    /// round-off made it indefinite, clamped to the nearest PSD matrix.
    pub fn predict_cov(&self, query: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_query(query)?;
        let ks = cross(&self.kernel, query, &self.inputs, self.base_dim);
        Ok(self.cov_from_cross(query, &ks))
    }

    pub fn predict(&self, query: &DVector<f64>) -> Result<Prediction> {
        self.check_query(query)?;
        let ks = cross(&self.kernel, query, &self.inputs, self.base_dim);
        Ok(Prediction {
            mean: &ks * &self.alpha,
            cov: self.cov_from_cross(query, &ks),
        })
    }

    /// Covariance before symmetrization and PSD clamping.
    pub fn predict_cov_raw(&self, query: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_query(query)?;
        let ks = cross(&self.kernel, query, &self.inputs, self.base_dim);
        let kss = self_block(&self.kernel, query, self.base_dim);
        let reduction = &ks * self.factor.solve_mat(&ks.transpose());
        Ok((kss - reduction) * (self.inputs.len() as f64 / self.lambda))
    }

    fn cov_from_cross(&self, query: &DVector<f64>, ks: &DMatrix<f64>) -> DMatrix<f64> {
        let kss = self_block(&self.kernel, query, self.base_dim);
        let reduction = ks * self.factor.solve_mat(&ks.transpose());
        let cov = symmetrize(&((kss - reduction) * (self.inputs.len() as f64 / self.lambda)));
        if min_eigenvalue(&cov) < 0.0 {
            clamp_psd(&cov)
        } else {
            cov
        }
    }

    pub fn predict_many(&self, queries: &[DVector<f64>]) -> Result<Vec<Prediction>> {
        queries.iter().map(|q| self.predict(q)).collect()
    }

    /// Predictions at `queries` packaged as a reference database, e.g. as a
    /// candidate for superposition.
    pub fn to_database(&self, queries: &[DVector<f64>]) -> Result<ReferenceDatabase> {
        let entries = queries
            .iter()
            .map(|q| {
                let p = self.predict(q)?;
                Ok(ReferenceEntry::new(q.clone(), p.mean, p.cov))
            })
            .collect::<Result<_>>()?;
        ReferenceDatabase::new(entries)
    }
}

fn pair_factorizes(system: &DMatrix<f64>, out: usize, i: usize, j: usize) -> bool {
    let mut sub = DMatrix::zeros(2 * out, 2 * out);
    for (a, ia) in [i, j].into_iter().enumerate() {
        for (b, jb) in [i, j].into_iter().enumerate() {
            sub.view_mut((a * out, b * out), (out, out))
                .copy_from(&system.view((ia * out, jb * out), (out, out)));
        }
    }
    CholeskyFactor::new(&sub).is_ok()
}

fn nearest_earlier(inputs: &[DVector<f64>], idx: usize) -> Option<usize> {
    (0..idx).min_by(|&a, &b| euclidean(&inputs[a], &inputs[idx]).total_cmp(&euclidean(&inputs[b], &inputs[idx])))
}

impl KmpModel<KernelSpec> {
    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            version: MODEL_VERSION,
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            lambda: self.lambda,
            kernel: self.kernel,
            entries: self
                .database
                .entries()
                .iter()
                .map(|e| EntryDocument {
                    s: e.input.as_slice().to_vec(),
                    mu: e.mean.as_slice().to_vec(),
                    sigma: to_row_major(&e.cov),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.version != MODEL_VERSION {
            return Err(KmpError::Version {
                found: doc.version,
                expected: MODEL_VERSION,
            });
        }
        let o = doc.output_dim;
        let entries = doc
            .entries
            .iter()
            .map(|e| {
                check_dim("entry input", doc.input_dim, e.s.len())?;
                check_dim("entry mean", o, e.mu.len())?;
                let cov = from_row_major(o, o, &e.sigma).ok_or(KmpError::DimensionMismatch {
                    context: "entry covariance",
                    expected: o * o,
                    found: e.sigma.len(),
                })?;
                Ok(ReferenceEntry::new(
                    DVector::from_column_slice(&e.s),
                    DVector::from_column_slice(&e.mu),
                    cov,
                ))
            })
            .collect::<Result<_>>()?;
        KmpModel::build(ReferenceDatabase::new(entries)?, doc.kernel, doc.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub version: u32,
    pub input_dim: usize,
    pub output_dim: usize,
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub entries: Vec<EntryDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryDocument {
    pub s: Vec<f64>,
    pub mu: Vec<f64>,
    /// Row-major `O'×O'` covariance.
    pub sigma: Vec<f64>,
}

/// A new desired point `N(μ̄, Σ̄)` at input `s̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredPoint {
    pub input: DVector<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl DesiredPoint {
    /// Checks that `cov` is SPD and matches `mean`.
    pub fn new(input: DVector<f64>, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim("desired covariance", mean.len(), cov.nrows())?;
        if input.iter().any(|v| !v.is_finite()) {
            return Err(KmpError::validation("desired input has non-finite values"));
        }
        let symmetric = symmetrize(&cov);
        if CholeskyFactor::new(&symmetric).is_err() {
            return Err(KmpError::NotPositiveDefinite {
                context: "desired point covariance".into(),
            });
        }
        Gaussian::new(mean.clone(), symmetric.clone())?;
        Ok(DesiredPoint {
            input,
            mean,
            cov: symmetric,
        })
    }

    /// Desired point at time `t` with isotropic variance.
    pub fn at_time(t: f64, mean: DVector<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(DVector::from_element(1, t), mean, DMatrix::identity(d, d) * variance)
    }

    /// Position-only point for a time-driven model: velocity mean zero with
    /// variance [`FREE_VELOCITY_VARIANCE`], leaving velocity unconstrained.
    pub fn position_only(input: DVector<f64>, position: DVector<f64>, position_cov: DMatrix<f64>) -> Result<Self> {
        let o = position.len();
        check_dim("position covariance", o, position_cov.nrows())?;
        let mut mean = DVector::zeros(2 * o);
        mean.rows_mut(0, o).copy_from(&position);
        let mut cov = DMatrix::identity(2 * o, 2 * o) * FREE_VELOCITY_VARIANCE;
        cov.view_mut((0, 0), (o, o)).copy_from(&position_cov);
        Self::new(input, mean, cov)
    }

    pub fn to_entry(&self) -> ReferenceEntry {
        ReferenceEntry::new(self.input.clone(), self.mean.clone(), self.cov.clone())
    }
}

/// What [`update_database`] did with a desired point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateAction {
    Replaced(usize),
    Inserted,
}

pub fn euclidean(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Replaces the nearest entry when it lies closer than `zeta`, otherwise
/// appends the point. Ties go to the lowest index. Euclidean distance.
pub fn update_database(
    database: &ReferenceDatabase,
    point: &DesiredPoint,
    zeta: f64,
) -> Result<(ReferenceDatabase, UpdateAction)> {
    update_database_with(database, point, zeta, euclidean)
}

pub fn update_database_with<D>(
    database: &ReferenceDatabase,
    point: &DesiredPoint,
    zeta: f64,
    distance: D,
) -> Result<(ReferenceDatabase, UpdateAction)>
where
    D: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    if !(zeta > 0.0) {
        return Err(KmpError::validation(format!("zeta must be positive, got {zeta}")));
    }
    check_dim("desired input", database.input_dim(), point.input.len())?;
    check_dim("desired mean", database.output_dim(), point.mean.len())?;
    let mut best: Option<(usize, f64)> = None;
    for (n, s) in database.inputs().enumerate() {
        let d = distance(&point.input, s);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((n, d));
        }
    }
    match best {
        Some((idx, d)) if d < zeta => Ok((database.with_replaced(idx, point.to_entry()), UpdateAction::Replaced(idx))),
        _ => Ok((database.with_appended(point.to_entry()), UpdateAction::Inserted)),
    }
}

/// Applies several desired points in order.
pub fn update_database_all(
    database: &ReferenceDatabase,
    points: &[DesiredPoint],
    zeta: f64,
) -> Result<(ReferenceDatabase, Vec<UpdateAction>)> {
    let mut db = database.clone();
    let mut actions = Vec::with_capacity(points.len());
    for p in points {
        let (next, action) = update_database(&db, p, zeta)?;
        db = next;
        actions.push(action);
    }
    Ok((db, actions))
}

/// `0.05 ×` the median nearest-neighbour distance between database inputs.
pub fn default_zeta(database: &ReferenceDatabase) -> Result<f64> {
    let inputs: Vec<&DVector<f64>> = database.inputs().collect();
    if inputs.len() < 2 {
        return Err(KmpError::validation("default zeta needs at least two entries"));
    }
    let mut nn: Vec<f64> = inputs
        .iter()
        .enumerate()
        .map(|(i, a)| {
            inputs
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| euclidean(a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let m = nn.len();
    let median = if m % 2 == 1 { nn[m / 2] } else { 0.5 * (nn[m / 2 - 1] + nn[m / 2]) };
    if !(median > 0.0) {
        return Err(KmpError::validation("database inputs coincide; cannot derive a default zeta"));
    }
    Ok(0.05 * median)
}

/// Mixes `L` aligned databases entry by entry:
/// `priorities[n][l]` weighs database `l` at input `n`.
pub fn superpose(databases: &[ReferenceDatabase], priorities: &[Vec<f64>]) -> Result<ReferenceDatabase> {
    let first = databases
        .first()
        .ok_or_else(|| KmpError::validation("superposition of zero databases"))?;
    let n = first.len();
    check_dim("priority rows", n, priorities.len())?;
    for db in &databases[1..] {
        check_dim("superposed database size", n, db.len())?;
        check_dim("superposed output dimension", first.output_dim(), db.output_dim())?;
        for (a, b) in first.inputs().zip(db.inputs()) {
            if a.len() != b.len() || euclidean(a, b) > 1e-12 * (1.0 + a.norm()) {
                return Err(KmpError::validation("superposed databases have different inputs"));
            }
        }
    }
    let entries = (0..n)
        .map(|i| {
            check_dim("priorities per entry", databases.len(), priorities[i].len())?;
            let terms = databases
                .iter()
                .zip(&priorities[i])
                .map(|(db, &g)| {
                    let e = &db.entries()[i];
                    Ok((Gaussian::new(e.mean.clone(), e.cov.clone())?, g))
                })
                .collect::<Result<Vec<_>>>()?;
            let (mean, cov) = Gaussian::product_scaled(&terms)?.into_parts();
            Ok(ReferenceEntry::new(first.entries()[i].input.clone(), mean, cov))
        })
        .collect::<Result<_>>()?;
    ReferenceDatabase::new(entries)
}

/// Monotonic map from a new duration `[0, t_D]` onto the learned duration
/// `[0, t_N]`.
#[derive(Clone)]
pub struct TimeScale {
    source: f64,
    target: f64,
    map: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for TimeScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeScale")
            .field("source", &self.source)
            .field("target", &self.target)
            .field("linear", &self.map.is_none())
            .finish()
    }
}

impl TimeScale {
    /// Linear `τ(t) = t · t_N / t_D`.
    pub fn linear(source: f64, target: f64) -> Result<Self> {
        if !(source > 0.0 && target > 0.0 && source.is_finite() && target.is_finite()) {
            return Err(KmpError::validation("durations must be positive"));
        }
        Ok(TimeScale {
            source,
            target,
            map: None,
        })
    }

    /// Custom monotonic map, checked for its endpoints and for strict
    /// increase on a 1000-point grid.
    pub fn custom<F>(source: f64, target: f64, map: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let mut ts = Self::linear(source, target)?;
        if map(0.0).abs() > 1e-12 || (map(target) - source).abs() > 1e-12 {
            return Err(KmpError::validation("time map must send 0 to 0 and t_D to t_N"));
        }
        let mut prev = f64::NEG_INFINITY;
        for i in 0..1000 {
            let v = map(target * i as f64 / 999.0);
            if !(v > prev) {
                return Err(KmpError::validation("time map is not strictly increasing"));
            }
            prev = v;
        }
        ts.map = Some(Arc::new(map));
        Ok(ts)
    }

    pub fn source_duration(&self) -> f64 {
        self.source
    }

    pub fn target_duration(&self) -> f64 {
        self.target
    }

    /// Times up to `1e-12·t_D` past the end count as `t_D` (grid rounding).
    pub fn tau(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.target * (1.0 + 1e-12)).contains(&t) {
            return Err(KmpError::validation(format!(
                "time {t} outside [0, {}]",
                self.target
            )));
        }
        let t = t.min(self.target);
        Ok(match &self.map {
            Some(f) => f(t),
            None if t == self.target => self.source,
            None => t * (self.source / self.target),
        })
    }
}

/// Prediction at `τ(t*)` for a time-input model.
pub fn predict_time_scaled<K: Kernel>(model: &KmpModel<K>, scale: &TimeScale, t: f64) -> Result<Prediction> {
    if model.input_dim() != 1 {
        return Err(KmpError::validation("time scaling needs a time-input model"));
    }
    model.predict(&DVector::from_element(1, scale.tau(t)?))
}
