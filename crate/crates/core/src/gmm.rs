//! Joint Gaussian mixture over `[s; ξ]`, fitted with EM, and Gaussian
//! mixture regression to extract a probabilistic reference trajectory.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::database::{ReferenceDatabase, ReferenceEntry};
use crate::error::{check_dim, KmpError, Result};
use crate::gaussian::{ConditionalMap, Gaussian};
use crate::linalg::{from_row_major, symmetrize, to_row_major};

/// Version tag of the serialized mixture document.
pub const GMM_VERSION: u32 = 1;

/// Below this responsibility mass a component is considered collapsed.
pub const COLLAPSE_MASS: f64 = 1e-8;

/// Relative trace floor added to the initial component covariances.
const INIT_COV_FLOOR: f64 = 1e-6;

/// Lloyd refinement steps after k-means++ seeding.
const KMEANS_ITERS: usize = 20;

/// One demonstration: `N` input/output pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Demo {
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl Demo {
    pub fn new(inputs: Vec<DVector<f64>>, outputs: Vec<DVector<f64>>) -> Result<Self> {
        check_dim("demonstration outputs", inputs.len(), outputs.len())?;
        Ok(Demo { inputs, outputs })
    }

    /// Builds a time-indexed demonstration from scalar times.
    pub fn from_times(times: &[f64], outputs: Vec<DVector<f64>>) -> Result<Self> {
        Demo::new(times.iter().map(|&t| DVector::from_element(1, t)).collect(), outputs)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn times(&self) -> Result<Vec<f64>> {
        if self.inputs.iter().any(|s| s.len() != 1) {
            return Err(KmpError::validation("operation needs a scalar (time) input"));
        }
        let t: Vec<f64> = self.inputs.iter().map(|s| s[0]).collect();
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(KmpError::validation("demonstration times must be strictly increasing"));
        }
        Ok(t)
    }

    /// Linearly resamples onto `n` uniformly spaced times spanning the
    /// demonstration.
    pub fn resample(&self, n: usize) -> Result<Demo> {
        let t = self.times()?;
        if t.len() < 2 || n < 2 {
            return Err(KmpError::validation("resampling needs at least two points"));
        }
        let grid = uniform_grid(t[0], t[t.len() - 1], n);
        let outputs = grid
            .iter()
            .map(|&g| {
                let j = t.partition_point(|&x| x <= g).clamp(1, t.len() - 1);
                let w = (g - t[j - 1]) / (t[j] - t[j - 1]);
                &self.outputs[j - 1] * (1.0 - w) + &self.outputs[j] * w
            })
            .collect();
        Demo::from_times(&grid, outputs)
    }

    /// Appends finite-difference velocities to every output, giving
    /// `[ξ; ξ̇]`. Central differences inside, one-sided at the ends.
    pub fn with_velocities(&self) -> Result<Demo> {
        let t = self.times()?;
        let n = t.len();
        if n < 2 {
            return Err(KmpError::validation("velocities need at least two points"));
        }
        let outputs = (0..n)
            .map(|i| {
                let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
                let vel = (&self.outputs[b] - &self.outputs[a]) / (t[b] - t[a]);
                let mut out = DVector::zeros(2 * vel.len());
                out.rows_mut(0, vel.len()).copy_from(&self.outputs[i]);
                out.rows_mut(vel.len(), vel.len()).copy_from(&vel);
                out
            })
            .collect();
        Demo::new(self.inputs.clone(), outputs)
    }
}

/// `H ≥ 2` aligned demonstrations of equal length and dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    demos: Vec<Demo>,
    input_dim: usize,
    output_dim: usize,
}

impl DemoSet {
    pub fn new(demos: Vec<Demo>) -> Result<Self> {
        if demos.len() < 2 {
            return Err(KmpError::validation(format!(
                "at least two demonstrations are needed, got {}",
                demos.len()
            )));
        }
        let lengths: Vec<usize> = demos.iter().map(Demo::len).collect();
        if lengths.iter().any(|&l| l != lengths[0]) {
            return Err(KmpError::RaggedDemos { lengths });
        }
        if lengths[0] == 0 {
            return Err(KmpError::validation("demonstrations are empty"));
        }
        let input_dim = demos[0].inputs[0].len();
        let output_dim = demos[0].outputs[0].len();
        if input_dim == 0 || output_dim == 0 {
            return Err(KmpError::validation("demonstrations need non-empty inputs and outputs"));
        }
        for d in &demos {
            for (s, x) in d.inputs.iter().zip(&d.outputs) {
                check_dim("demonstration input", input_dim, s.len())?;
                check_dim("demonstration output", output_dim, x.len())?;
                if s.iter().chain(x.iter()).any(|v| !v.is_finite()) {
                    return Err(KmpError::validation("demonstrations contain non-finite values"));
                }
            }
        }
        Ok(DemoSet {
            demos,
            input_dim,
            output_dim,
        })
    }

    /// Resamples each demonstration to `n` points before validation, which
    /// makes demonstrations of differing lengths usable.
    pub fn resampled(demos: &[Demo], n: usize) -> Result<Self> {
        DemoSet::new(demos.iter().map(|d| d.resample(n)).collect::<Result<_>>()?)
    }

    pub fn with_velocities(&self) -> Result<Self> {
        DemoSet::new(self.demos.iter().map(Demo::with_velocities).collect::<Result<_>>()?)
    }

    pub fn demos(&self) -> &[Demo] {
        &self.demos
    }

    pub fn num_demos(&self) -> usize {
        self.demos.len()
    }

    /// Points per demonstration.
    pub fn demo_len(&self) -> usize {
        self.demos[0].len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// All `H·N` joint points `[s; ξ]`.
    pub fn joint_points(&self) -> Vec<DVector<f64>> {
        let (i, o) = (self.input_dim, self.output_dim);
        self.demos
            .iter()
            .flat_map(|d| d.inputs.iter().zip(&d.outputs))
            .map(|(s, x)| {
                let mut p = DVector::zeros(i + o);
                p.rows_mut(0, i).copy_from(s);
                p.rows_mut(i, o).copy_from(x);
                p
            })
            .collect()
    }

    /// Time span `[min, max]` of a scalar-input set.
    pub fn time_span(&self) -> Result<(f64, f64)> {
        if self.input_dim != 1 {
            return Err(KmpError::validation("time span needs a scalar input"));
        }
        let all = self.demos.iter().flat_map(|d| d.inputs.iter().map(|s| s[0]));
        Ok(all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmOptions {
    pub components: usize,
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iter() -> usize {
    200
}

fn default_tol() -> f64 {
    1e-8
}

impl EmOptions {
    pub fn new(components: usize, seed: u64) -> Self {
        EmOptions {
            components,
            seed,
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }
}

/// A fitted mixture together with the log-likelihood after each E-step.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmmModel,
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub prior: f64,
    pub joint: Gaussian,
}

/// Gaussian mixture over `[s; ξ]` with precomputed conditionals.
#[derive(Debug, Clone)]
pub struct GmmModel {
    components: Vec<GmmComponent>,
    maps: Vec<ConditionalMap>,
    input_dim: usize,
    output_dim: usize,
}

impl PartialEq for GmmModel {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim && self.components == other.components
    }
}

/// GMR output with the responsibilities used.
#[derive(Debug, Clone)]
pub struct GmrResult {
    pub gaussian: Gaussian,
    pub responsibilities: Vec<f64>,
    /// True when every component density underflowed at the query and the
    /// dominant component alone was used.
    pub extrapolated: bool,
}

impl GmmModel {
    pub fn new(components: Vec<GmmComponent>, input_dim: usize) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| KmpError::validation("mixture has no components"))?;
        let d = first.joint.dim();
        if input_dim == 0 || input_dim >= d {
            return Err(KmpError::validation(format!(
                "input dimension {input_dim} invalid for joint dimension {d}"
            )));
        }
        let mut sum = 0.0;
        for (c, comp) in components.iter().enumerate() {
            check_dim("component dimension", d, comp.joint.dim())?;
            if !(comp.prior > 0.0 && comp.prior.is_finite()) {
                return Err(KmpError::validation(format!("component {c} prior {} is not positive", comp.prior)));
            }
            sum += comp.prior;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(KmpError::validation(format!("mixture priors sum to {sum}")));
        }
        let maps = components
            .iter()
            .map(|c| ConditionalMap::new(&c.joint, input_dim))
            .collect::<Result<_>>()?;
        Ok(GmmModel {
            components,
            maps,
            input_dim,
            output_dim: d - input_dim,
        })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Mean log-density of joint points under the mixture.
    pub fn log_likelihood(&self, points: &[DVector<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for p in points {
            let terms = self
                .components
                .iter()
                .map(|c| Ok(c.prior.ln() + c.joint.log_density(p)?))
                .collect::<Result<Vec<f64>>>()?;
            total += log_sum_exp(&terms);
        }
        Ok(total)
    }

    /// Responsibilities `h_c(s)` and whether all densities underflowed.
    pub fn responsibilities(&self, query: &DVector<f64>) -> Result<(Vec<f64>, bool)> {
        check_dim("GMR query", self.input_dim, query.len())?;
        let logw = self
            .components
            .iter()
            .zip(&self.maps)
            .map(|(c, m)| Ok(c.prior.ln() + m.input_marginal.log_density(query)?))
            .collect::<Result<Vec<f64>>>()?;
        let (best, max) = logw
            .iter()
            .cloned()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        if max.exp() == 0.0 || !max.is_finite() {
            let mut h = vec![0.0; logw.len()];
            h[best] = 1.0;
            return Ok((h, true));
        }
        let w: Vec<f64> = logw.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok((w.into_iter().map(|v| v / z).collect(), false))
    }

    pub fn gmr(&self, query: &DVector<f64>) -> Result<Gaussian> {
        Ok(self.gmr_detailed(query)?.gaussian)
    }

    pub fn gmr_detailed(&self, query: &DVector<f64>) -> Result<GmrResult> {
        let (h, extrapolated) = self.responsibilities(query)?;
        if extrapolated {
            log::warn!("GMR query {:?} lies outside the mixture support; using the dominant component", query.as_slice());
        }
        let (mean, cov) = self.gmr_moments(query, &h);
        Ok(GmrResult {
            gaussian: Gaussian::new(mean, cov)?,
            responsibilities: h,
            extrapolated,
        })
    }

    /// Mixture moments before any SPD repair. The covariance uses the
    /// centred form `Σ h_c (Σ_c' + (μ_c − μ̂)(μ_c − μ̂)ᵀ)`, which equals
    /// `E[ξξᵀ|s] − μ̂μ̂ᵀ` without the cancellation.
    pub fn gmr_moments(&self, query: &DVector<f64>, h: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let o = self.output_dim;
        let cond: Vec<DVector<f64>> = self.maps.iter().map(|m| m.conditional_mean(query)).collect();
        let mut mean = DVector::zeros(o);
        for (hc, mc) in h.iter().zip(&cond) {
            mean += mc * *hc;
        }
        let mut cov = DMatrix::zeros(o, o);
        for ((hc, mc), map) in h.iter().zip(&cond).zip(&self.maps) {
            if *hc == 0.0 {
                continue;
            }
            let d = mc - &mean;
            cov += (&map.cond_cov + &d * d.transpose()) * *hc;
        }
        (mean, symmetrize(&cov))
    }

    /// Reference database `{s_n, μ̂_n, Σ̂_n}` from GMR at each input.
    pub fn extract_reference(&self, inputs: &[DVector<f64>]) -> Result<ReferenceDatabase> {
        for i in 0..inputs.len() {
            for j in (i + 1)..inputs.len() {
                if inputs[i] == inputs[j] {
                    return Err(KmpError::validation(format!("reference inputs {i} and {j} coincide")));
                }
            }
        }
        let entries = inputs
            .iter()
            .map(|s| {
                let (mean, cov) = self.gmr(s)?.into_parts();
                Ok(ReferenceEntry::new(s.clone(), mean, cov))
            })
            .collect::<Result<_>>()?;
        ReferenceDatabase::new(entries)
    }

    /// Draws `n` inputs from the learned input marginal by ancestral
    /// sampling: pick a component by prior, then sample its `s` marginal.
    pub fn sample_input_marginal(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = self.components.len() - 1;
                for (c, comp) in self.components.iter().enumerate() {
                    acc += comp.prior;
                    if u < acc {
                        pick = c;
                        break;
                    }
                }
                let marg = &self.maps[pick].input_marginal;
                let z = DVector::from_fn(self.input_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                marg.mean() + marg.factor().lower() * z
            })
            .collect()
    }

    pub fn to_document(&self) -> GmmDocument {
        GmmDocument {
            version: GMM_VERSION,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            components: self
                .components
                .iter()
                .map(|c| ComponentDocument {
                    prior: c.prior,
                    mean: c.joint.mean().as_slice().to_vec(),
                    cov: to_row_major(c.joint.cov()),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &GmmDocument) -> Result<Self> {
        if doc.version != GMM_VERSION {
            return Err(KmpError::Version {
                found: doc.version,
                expected: GMM_VERSION,
            });
        }
        let d = doc.input_dim + doc.output_dim;
        let components = doc
            .components
            .iter()
            .map(|c| {
                check_dim("component mean", d, c.mean.len())?;
                let cov = from_row_major(d, d, &c.cov).ok_or(KmpError::DimensionMismatch {
                    context: "component covariance",
                    expected: d * d,
                    found: c.cov.len(),
                })?;
                Ok(GmmComponent {
                    prior: c.prior,
                    joint: Gaussian::new(DVector::from_column_slice(&c.mean), cov)?,
                })
            })
            .collect::<Result<_>>()?;
        GmmModel::new(components, doc.input_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmDocument {
    pub version: u32,
    pub input_dim: usize,
    pub output_dim: usize,
    pub components: Vec<ComponentDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDocument {
    pub prior: f64,
    pub mean: Vec<f64>,
    /// Row-major `(I+O)×(I+O)` covariance.
    pub cov: Vec<f64>,
}

/// `n` evenly spaced values from `start` to `end` inclusive.
pub fn uniform_grid(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![start],
        _ => {
            let step = (end - start) / (n - 1) as f64;
            let mut g: Vec<f64> = (0..n).map(|i| start + step * i as f64).collect();
            g[n - 1] = end;
            g
        }
    }
}

/// Fits a `C`-component mixture to the stacked demonstrations.
pub fn fit_em(data: &DemoSet, options: &EmOptions) -> Result<EmFit> {
    fit_em_points(&data.joint_points(), data.input_dim(), options)
}

/// EM on raw joint points whose first `input_dim` coordinates are inputs.
pub fn fit_em_points(points: &[DVector<f64>], input_dim: usize, options: &EmOptions) -> Result<EmFit> {
    let c = options.components;
    if c == 0 {
        return Err(KmpError::validation("EM needs at least one component"));
    }
    let required = 10 * c;
    if points.len() < required {
        return Err(KmpError::TooFewPoints {
            points: points.len(),
            components: c,
            required,
        });
    }
    if !(options.tol >= 0.0) || options.max_iter == 0 {
        return Err(KmpError::validation("EM needs tol >= 0 and max_iter >= 1"));
    }
    let d = points[0].len();
    for p in points {
        check_dim("EM point", d, p.len())?;
    }

    let mut components = initialize(points, c, options.seed)?;
    let mut history = Vec::new();
    let mut converged = false;
    let n = points.len();
    let mut resp = DMatrix::<f64>::zeros(n, c);
    for _ in 0..options.max_iter {
        // E-step in log space.
        let mut ll = 0.0;
        let mut row = vec![0.0; c];
        for (i, p) in points.iter().enumerate() {
            for (k, comp) in components.iter().enumerate() {
                row[k] = comp.prior.ln() + comp.joint.log_density(p)?;
            }
            let lse = log_sum_exp(&row);
            ll += lse;
            for k in 0..c {
                resp[(i, k)] = (row[k] - lse).exp();
            }
        }
        let prev = history.last().copied();
        history.push(ll);
        if let Some(prev) = prev {
            if (ll - prev) / prev.abs().max(f64::MIN_POSITIVE) < options.tol {
                converged = true;
                break;
            }
        }
        components = m_step(points, &resp)?;
    }
    log::debug!("EM finished after {} iterations, ll = {:?}", history.len(), history.last());
    Ok(EmFit {
        model: GmmModel::new(components, input_dim)?,
        log_likelihood: history,
        converged,
    })
}

fn m_step(points: &[DVector<f64>], resp: &DMatrix<f64>) -> Result<Vec<GmmComponent>> {
    let (n, c) = resp.shape();
    let d = points[0].len();
    let mut out = Vec::with_capacity(c);
    for k in 0..c {
        let mass: f64 = resp.column(k).sum();
        if !(mass >= COLLAPSE_MASS) {
            return Err(KmpError::EmCollapse { component: k, mass });
        }
        let mut mean = DVector::zeros(d);
        for (i, p) in points.iter().enumerate() {
            mean += p * resp[(i, k)];
        }
        mean /= mass;
        let mut cov = DMatrix::zeros(d, d);
        for (i, p) in points.iter().enumerate() {
            let diff = p - &mean;
            cov += &diff * diff.transpose() * resp[(i, k)];
        }
        cov /= mass;
        out.push(GmmComponent {
            prior: mass / n as f64,
            joint: Gaussian::new(mean, cov)?,
        });
    }
    normalize_priors(&mut out);
    Ok(out)
}

fn normalize_priors(components: &mut [GmmComponent]) {
    let s: f64 = components.iter().map(|c| c.prior).sum();
    for comp in components {
        comp.prior /= s;
    }
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sample_cov(points: &[&DVector<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mut mean = DVector::zeros(d);
    for p in points {
        mean += *p;
    }
    mean /= points.len() as f64;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let diff = *p - &mean;
        cov += &diff * diff.transpose();
    }
    (mean, cov / points.len() as f64)
}

/// k-means++ seeding, Lloyd refinement, then per-cluster moments.
fn initialize(points: &[DVector<f64>], c: usize, seed: u64) -> Result<Vec<GmmComponent>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let d = points[0].len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < c {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            dist.iter()
                .position(|&w| {
                    acc += w;
                    u < acc
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..c)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .expect("c >= 1");
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        for (k, center) in centers.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = (0..n).filter(|&i| labels[i] == k).map(|i| &points[i]).collect();
            if !members.is_empty() {
                *center = sample_cov(&members, d).0;
            }
        }
        if !changed {
            break;
        }
    }

    let all: Vec<&DVector<f64>> = points.iter().collect();
    let (_, global_cov) = sample_cov(&all, d);
    let floor = INIT_COV_FLOOR * global_cov.trace() / d as f64;
    let mut comps = Vec::with_capacity(c);
    for k in 0..c {
        let members: Vec<&DVector<f64>> = (0..n).filter(|&i| labels[i] == k).map(|i| &points[i]).collect();
        let (mean, cov) = if members.len() >= 2 {
            sample_cov(&members, d)
        } else {
            (centers[k].clone(), global_cov.clone())
        };
        let cov = cov + DMatrix::identity(d, d) * floor.max(f64::MIN_POSITIVE);
        comps.push(GmmComponent {
            prior: (members.len().max(1)) as f64,
            joint: Gaussian::new(mean, cov)?,
        });
    }
    normalize_priors(&mut comps);
    Ok(comps)
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::linalg::min_eigenvalue;

    fn spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.3
    }

    fn gaussian_points(rng: &mut ChaCha8Rng, mean: &DVector<f64>, cov: &DMatrix<f64>, n: usize) -> Vec<DVector<f64>> {
        let l = cov.clone().cholesky().unwrap().l();
        (0..n)
            .map(|_| mean + &l * DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    fn random_model(rng: &mut ChaCha8Rng, c: usize, d: usize, input: usize) -> GmmModel {
        let mut priors: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = priors.iter().sum();
        priors.iter_mut().for_each(|p| *p /= s);
        let comps = priors
            .into_iter()
            .map(|prior| GmmComponent {
                prior,
                joint: Gaussian::new(DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)), spd(rng, d)).unwrap(),
            })
            .collect();
        GmmModel::new(comps, input).unwrap()
    }

    #[test]
    fn single_component_recovers_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cov = spd(&mut rng, 3);
        let pts = gaussian_points(&mut rng, &DVector::from_vec(vec![1.0, -1.0, 0.5]), &cov, 500);
        let fit = fit_em_points(&pts, 1, &EmOptions::new(1, 3)).unwrap();
        // Independent oracle: plain sample statistics.
        let n = pts.len() as f64;
        let mean = pts.iter().fold(DVector::zeros(3), |a, p| a + p) / n;
        let scov = pts.iter().fold(DMatrix::zeros(3, 3), |a, p| {
            let d = p - &mean;
            a + &d * d.transpose()
        }) / n;
        let g = &fit.model.components()[0].joint;
        assert_relative_eq!(g.mean(), &mean, epsilon = 1e-8);
        assert_relative_eq!(g.cov(), &scov, epsilon = 1e-8);
    }

    #[test]
    fn em_is_deterministic_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = gaussian_points(&mut rng, &DVector::from_vec(vec![0.0, 0.0]), &DMatrix::identity(2, 2), 150);
        pts.extend(gaussian_points(&mut rng, &DVector::from_vec(vec![5.0, 3.0]), &(DMatrix::identity(2, 2) * 0.5), 150));
        let a = fit_em_points(&pts, 1, &EmOptions::new(3, 9)).unwrap();
        let b = fit_em_points(&pts, 1, &EmOptions::new(3, 9)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log_likelihood, b.log_likelihood);
        for w in a.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{w:?}");
        }
    }

    #[test]
    fn em_rejects_too_few_points() {
        let pts: Vec<DVector<f64>> = (0..5).map(|i| DVector::from_vec(vec![i as f64, 0.0])).collect();
        assert!(matches!(
            fit_em_points(&pts, 1, &EmOptions::new(6, 0)),
            Err(KmpError::TooFewPoints { required: 60, .. })
        ));
        assert!(fit_em_points(&pts, 1, &EmOptions::new(0, 0)).is_err());
    }

    #[test]
    fn single_component_gmr_is_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let d = rng.random_range(2..6);
            let input = rng.random_range(1..d);
            let model = random_model(&mut rng, 1, d, input);
            let q = DVector::from_fn(input, |_, _| rng.random_range(-2.0..2.0));
            let g = model.gmr(&q).unwrap();
            let c = model.components()[0].joint.condition(input, &q).unwrap();
            assert_relative_eq!(g.mean(), c.mean(), epsilon = 1e-12);
            assert_relative_eq!(g.cov(), c.cov(), epsilon = 1e-12);
        }
    }

    #[test]
    fn gmr_responsibilities_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let c = rng.random_range(1..5);
            let model = random_model(&mut rng, c, 3, 1);
            let q = DVector::from_element(1, rng.random_range(-5.0..5.0));
            let (h, _) = model.responsibilities(&q).unwrap();
            assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let (_, cov) = model.gmr_moments(&q, &h);
            assert!(min_eigenvalue(&cov) >= -1e-9);
        }
    }

    #[test]
    fn gmr_matches_direct_mixture_moments() {
        // Oracle: E[ξξᵀ|s] − μ̂μ̂ᵀ with hand-set responsibilities.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng, 3, 3, 1);
        let q = DVector::from_element(1, 0.4);
        let h = vec![0.2, 0.5, 0.3];
        let conds: Vec<Gaussian> = model.components().iter().map(|c| c.joint.condition(1, &q).unwrap()).collect();
        let mu = conds.iter().zip(&h).fold(DVector::zeros(2), |a, (g, w)| a + g.mean() * *w);
        let second = conds.iter().zip(&h).fold(DMatrix::zeros(2, 2), |a, (g, w)| {
            a + (g.cov() + g.mean() * g.mean().transpose()) * *w
        });
        let (m, cov) = model.gmr_moments(&q, &h);
        assert_relative_eq!(m, mu.clone(), epsilon = 1e-12);
        assert_relative_eq!(cov, second - &mu * mu.transpose(), epsilon = 1e-10);
    }

    #[test]
    fn isolated_component_dominates() {
        let near = GmmComponent {
            prior: 0.5,
            joint: Gaussian::from_slices(&[0.0, 1.0], &[0.1, 0.05, 0.05, 0.2]).unwrap(),
        };
        let far = GmmComponent {
            prior: 0.5,
            joint: Gaussian::from_slices(&[100.0, -1.0], &[0.1, 0.0, 0.0, 0.2]).unwrap(),
        };
        let model = GmmModel::new(vec![near.clone(), far], 1).unwrap();
        let q = DVector::from_element(1, 0.0);
        let g = model.gmr(&q).unwrap();
        let c = near.joint.condition(1, &q).unwrap();
        assert_relative_eq!(g.mean(), c.mean(), epsilon = 1e-9);
        assert_relative_eq!(g.cov(), c.cov(), epsilon = 1e-9);
    }

    #[test]
    fn mirrored_components_average() {
        let a = GmmComponent {
            prior: 0.5,
            joint: Gaussian::from_slices(&[-1.0, 2.0], &[1.0, 0.3, 0.3, 1.0]).unwrap(),
        };
        let b = GmmComponent {
            prior: 0.5,
            joint: Gaussian::from_slices(&[1.0, -0.5], &[1.0, -0.3, -0.3, 1.0]).unwrap(),
        };
        let model = GmmModel::new(vec![a.clone(), b.clone()], 1).unwrap();
        let q = DVector::from_element(1, 0.0);
        let ma = a.joint.condition(1, &q).unwrap().mean()[0];
        let mb = b.joint.condition(1, &q).unwrap().mean()[0];
        assert_relative_eq!(model.gmr(&q).unwrap().mean()[0], 0.5 * (ma + mb), epsilon = 1e-14);
    }

    #[test]
    fn far_query_falls_back_to_dominant_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = random_model(&mut rng, 3, 2, 1);
        let r = model.gmr_detailed(&DVector::from_element(1, 1e6)).unwrap();
        assert!(r.extrapolated);
        assert!(r.gaussian.mean().iter().all(|v| v.is_finite()));
        assert_eq!(r.responsibilities.iter().filter(|&&h| h == 1.0).count(), 1);
    }

    #[test]
    fn extract_reference_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = random_model(&mut rng, 2, 3, 1);
        let s = DVector::from_element(1, 0.3);
        let db = model.extract_reference(std::slice::from_ref(&s)).unwrap();
        let g = model.gmr(&s).unwrap();
        assert_eq!(db.entries()[0].mean, *g.mean());
        assert_eq!(db.entries()[0].cov, *g.cov());
        assert!(model.extract_reference(&[s.clone(), s]).is_err());
    }

    #[test]
    fn document_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = random_model(&mut rng, 2, 3, 1);
        let json = serde_json::to_string(&model.to_document()).unwrap();
        let back = GmmModel::from_document(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, model);
        let mut doc = model.to_document();
        doc.version = 7;
        assert!(matches!(GmmModel::from_document(&doc), Err(KmpError::Version { .. })));
    }

    #[test]
    fn demo_set_validation_and_utilities() {
        let d = |n: usize| {
            let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
            Demo::from_times(&t, t.iter().map(|&x| DVector::from_element(1, 2.0 * x)).collect()).unwrap()
        };
        assert!(DemoSet::new(vec![d(3)]).is_err());
        assert!(matches!(DemoSet::new(vec![d(3), d(4)]), Err(KmpError::RaggedDemos { .. })));
        let set = DemoSet::resampled(&[d(3), d(5)], 9).unwrap();
        assert_eq!(set.demo_len(), 9);
        let v = set.with_velocities().unwrap();
        assert_eq!(v.output_dim(), 2);
        for x in &v.demos()[0].outputs {
            assert_relative_eq!(x[1], 2.0, epsilon = 1e-12);
        }
        assert_eq!(uniform_grid(0.0, 2.0, 5), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }
}
