//! Multivariate Gaussian algebra used throughout the crate: construction
//! with SPD repair, conditioning, priority-scaled products and densities.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, KmpError, Result};
use crate::linalg::{symmetrize, CholeskyFactor};

/// Relative shift applied once when a covariance fails to factorize.
pub const SPD_REPAIR_SCALE: f64 = 1e-10;

/// Condition number above which an input block is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Tolerance on `Σγ = 1` in [`Gaussian::product_scaled`].
pub const PRIORITY_SUM_TOL: f64 = 1e-9;

/// A Gaussian with a positive definite covariance and its cached factor.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    factor: CholeskyFactor,
}

impl PartialEq for Gaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl Gaussian {
    /// Builds a Gaussian, symmetrizing `cov`. If the Cholesky factorization
    /// fails, `1e-10 · trace/d · I` is added once; a second failure is an
    /// error.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(KmpError::validation("Gaussian of dimension zero"));
        }
        check_dim("covariance rows", d, cov.nrows())?;
        check_dim("covariance columns", d, cov.ncols())?;
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(KmpError::validation("non-finite Gaussian parameters"));
        }
        let mut cov = symmetrize(&cov);
        let jitter = SPD_REPAIR_SCALE * cov.trace() / d as f64;
        let factored =
            CholeskyFactor::with_jitter(&cov, jitter).map_err(|_| KmpError::NotPositiveDefinite {
                context: format!("{d}x{d} covariance"),
            })?;
        if factored.jitter > 0.0 {
            log::debug!("covariance repaired with jitter {:e}", factored.jitter);
            for i in 0..d {
                cov[(i, i)] += factored.jitter;
            }
        }
        Ok(Gaussian {
            mean,
            cov,
            factor: factored.factor,
        })
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let d = mean.len();
        if cov_row_major.len() != d * d {
            return Err(KmpError::DimensionMismatch {
                context: "row-major covariance length",
                expected: d * d,
                found: cov_row_major.len(),
            });
        }
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(d, d, cov_row_major),
        )
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// `Σ⁻¹` through the cached Cholesky factor.
    pub fn precision(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    /// Conditions the joint `[s; ξ]` on `s = query`, where `s` is the first
    /// `input_dim` coordinates.
    pub fn condition(&self, input_dim: usize, query: &DVector<f64>) -> Result<Gaussian> {
        let d = self.dim();
        if input_dim == 0 || input_dim >= d {
            return Err(KmpError::validation(format!(
                "split {input_dim} leaves no input or no output block in a {d}-dimensional joint"
            )));
        }
        check_dim("conditioning query", input_dim, query.len())?;
        let parts = ConditionalMap::new(self, input_dim)?;
        parts.apply(query)
    }

    /// Product of the Gaussians `N(μ_l, Σ_l/γ_l)`:
    /// `(Σ^S)⁻¹ = Σ_l γ_l Σ_l⁻¹` and `μ^S = Σ^S Σ_l γ_l Σ_l⁻¹ μ_l`.
    ///
    /// Every `γ_l` must lie in the open interval `(0, 1)` and the priorities
    /// must sum to one within [`PRIORITY_SUM_TOL`]. They are never
    /// renormalized.
    pub fn product_scaled(terms: &[(Gaussian, f64)]) -> Result<Gaussian> {
        if terms.is_empty() {
            return Err(KmpError::validation("product of zero Gaussians"));
        }
        for (l, (_, gamma)) in terms.iter().enumerate() {
            if !(*gamma > 0.0 && *gamma < 1.0) {
                return Err(KmpError::validation(format!(
                    "priority {gamma} of term {l} is outside (0, 1)"
                )));
            }
        }
        let sum: f64 = terms.iter().map(|(_, g)| g).sum();
        if (sum - 1.0).abs() > PRIORITY_SUM_TOL {
            return Err(KmpError::validation(format!(
                "priorities sum to {sum}, expected 1"
            )));
        }
        precision_weighted(terms.iter().map(|(g, w)| (g, *w)))
    }

    /// Unweighted product of Gaussians (precision-weighted fusion).
    pub fn product(terms: &[Gaussian]) -> Result<Gaussian> {
        if terms.is_empty() {
            return Err(KmpError::validation("product of zero Gaussians"));
        }
        precision_weighted(terms.iter().map(|g| (g, 1.0)))
    }

    /// `log N(x | μ, Σ)`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("density argument", self.dim(), x.len())?;
        let diff = x - &self.mean;
        let d = self.dim() as f64;
        Ok(-0.5 * (d * (2.0 * PI).ln() + self.factor.log_det() + self.factor.quad_form(&diff)))
    }

    /// Pushes the Gaussian through `x ↦ A x + b`.
    pub fn affine(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Gaussian> {
        check_dim("affine map columns", self.dim(), a.ncols())?;
        check_dim("affine offset", a.nrows(), b.len())?;
        Gaussian::new(a * &self.mean + b, a * &self.cov * a.transpose())
    }
}

fn precision_weighted<'a>(terms: impl Iterator<Item = (&'a Gaussian, f64)>) -> Result<Gaussian> {
    let mut precision: Option<DMatrix<f64>> = None;
    let mut info: Option<DVector<f64>> = None;
    for (g, w) in terms {
        let p = g.precision() * w;
        let h = g.factor.solve_vec(&g.mean) * w;
        match (&mut precision, &mut info) {
            (Some(ps), Some(hs)) => {
                check_dim("product term dimension", ps.nrows(), g.dim())?;
                *ps += p;
                *hs += h;
            }
            _ => {
                precision = Some(p);
                info = Some(h);
            }
        }
    }
    let precision = symmetrize(&precision.expect("non-empty"));
    let info = info.expect("non-empty");
    let d = precision.nrows();
    let pf = CholeskyFactor::with_jitter(&precision, SPD_REPAIR_SCALE * precision.trace() / d as f64)
        .map_err(|_| KmpError::NotPositiveDefinite {
            context: "summed precision".into(),
        })?
        .factor;
    let cov = pf.inverse();
    let mean = pf.solve_vec(&info);
    Gaussian::new(mean, cov)
}

/// Precomputed pieces of `ξ | s` for a joint Gaussian: the input marginal,
/// the regression matrix `Σ^{ξs}(Σ^{ss})⁻¹` and the conditional covariance.
#[derive(Debug, Clone)]
pub(crate) struct ConditionalMap {
    pub input_marginal: Gaussian,
    output_mean: DVector<f64>,
    regression: DMatrix<f64>,
    pub cond_cov: DMatrix<f64>,
}

impl ConditionalMap {
    pub fn new(joint: &Gaussian, input_dim: usize) -> Result<Self> {
        let d = joint.dim();
        let out = d - input_dim;
        let cov = joint.cov();
        let sss = cov.view((0, 0), (input_dim, input_dim)).into_owned();
        let sxs = cov.view((input_dim, 0), (out, input_dim)).into_owned();
        let sxx = cov.view((input_dim, input_dim), (out, out)).into_owned();
        let ss_factor = CholeskyFactor::new(&sss).map_err(|_| KmpError::Conditioning {
            condition: f64::INFINITY,
        })?;
        let rcond = ss_factor.rcond_estimate();
        if rcond < 1.0 / MAX_CONDITION {
            return Err(KmpError::Conditioning {
                condition: 1.0 / rcond,
            });
        }
        // Σ^{ξs}(Σ^{ss})⁻¹ = (Σ^{ss})⁻¹Σ^{sξ} transposed.
        let regression = ss_factor.solve_mat(&sxs.transpose()).transpose();
        let cond_cov = symmetrize(&(&sxx - &regression * sxs.transpose()));
        let input_marginal = Gaussian {
            mean: joint.mean().rows(0, input_dim).into_owned(),
            cov: sss,
            factor: ss_factor,
        };
        Ok(ConditionalMap {
            input_marginal,
            output_mean: joint.mean().rows(input_dim, out).into_owned(),
            regression,
            cond_cov,
        })
    }

    pub fn conditional_mean(&self, query: &DVector<f64>) -> DVector<f64> {
        &self.output_mean + &self.regression * (query - self.input_marginal.mean())
    }

    pub fn apply(&self, query: &DVector<f64>) -> Result<Gaussian> {
        Gaussian::new(self.conditional_mean(query), self.cond_cov.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn g1(mean: f64, var: f64) -> Gaussian {
        Gaussian::from_slices(&[mean], &[var]).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.2
    }

    #[test]
    fn condition_hand_example() {
        let joint = Gaussian::from_slices(&[0.0, 0.0], &[1.0, 0.5, 0.5, 1.0]).unwrap();
        let c = joint.condition(1, &DVector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(c.mean()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(c.cov()[(0, 0)], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn condition_zero_cross_block_decouples() {
        let joint = Gaussian::from_slices(
            &[1.0, -2.0, 3.0],
            &[2.0, 0.0, 0.0, 0.0, 1.5, 0.3, 0.0, 0.3, 0.7],
        )
        .unwrap();
        let c = joint.condition(1, &DVector::from_element(1, 42.0)).unwrap();
        assert_eq!(c.mean().as_slice(), &[-2.0, 3.0]);
        assert_relative_eq!(c.cov()[(0, 1)], 0.3);
        assert_relative_eq!(c.cov()[(1, 1)], 0.7);
    }

    #[test]
    fn condition_at_input_mean_returns_output_mean() {
        let joint = Gaussian::from_slices(&[0.3, 1.2], &[2.0, 0.9, 0.9, 1.0]).unwrap();
        let c = joint.condition(1, &DVector::from_element(1, 0.3)).unwrap();
        assert_relative_eq!(c.mean()[0], 1.2, epsilon = 1e-15);
    }

    #[test]
    fn condition_rejects_singular_input_block() {
        // Factorizable as a joint, but the input block has condition ~1e14.
        let c = 1.0 - 1e-14;
        let joint = Gaussian::from_slices(
            &[0.0, 0.0, 0.0],
            &[1.0, c, 0.0, c, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let err = joint.condition(2, &DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, KmpError::Conditioning { .. }), "{err}");
    }

    #[test]
    fn product_scaled_examples() {
        let p = Gaussian::product_scaled(&[(g1(0.0, 1.0), 0.5), (g1(2.0, 1.0), 0.5)]).unwrap();
        assert_relative_eq!(p.mean()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(p.cov()[(0, 0)], 1.0, epsilon = 1e-14);

        let p = Gaussian::product_scaled(&[(g1(0.0, 1.0), 0.5), (g1(0.0, 4.0), 0.5)]).unwrap();
        assert_relative_eq!(p.mean()[0], 0.0);
        assert_relative_eq!(p.cov()[(0, 0)], 1.6, epsilon = 1e-14);

        let g = Gaussian::from_slices(&[1.0, 2.0], &[1.0, 0.2, 0.2, 0.5]).unwrap();
        let p = Gaussian::product_scaled(&[(g.clone(), 1.0 - 1e-12)]).unwrap();
        assert_relative_eq!(p.mean(), g.mean(), epsilon = 1e-10);
        assert_relative_eq!(p.cov(), g.cov(), epsilon = 1e-10);
    }

    #[test]
    fn product_scaled_validates_priorities() {
        let g = g1(0.0, 1.0);
        for bad in [
            vec![(g.clone(), 1.0)],
            vec![(g.clone(), 0.0), (g.clone(), 1.0)],
            vec![(g.clone(), 0.5), (g.clone(), 0.4)],
        ] {
            assert!(matches!(
                Gaussian::product_scaled(&bad),
                Err(KmpError::Validation(_))
            ));
        }
        let h = Gaussian::from_slices(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(Gaussian::product_scaled(&[(g, 0.5), (h, 0.5)]).is_err());
    }

    #[test]
    fn product_precision_is_sum_and_order_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let d = rng.random_range(1..4);
            let l = rng.random_range(2..5);
            let mut raw: Vec<f64> = (0..l).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter_mut().for_each(|v| *v /= s);
            let terms: Vec<(Gaussian, f64)> = raw
                .iter()
                .map(|&w| {
                    let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
                    (Gaussian::new(mean, random_spd(&mut rng, d)).unwrap(), w)
                })
                .collect();
            let p = Gaussian::product_scaled(&terms).unwrap();
            let expected_precision = terms
                .iter()
                .fold(DMatrix::zeros(d, d), |acc, (g, w)| {
                    acc + (g.cov() / *w).try_inverse().unwrap()
                });
            assert_relative_eq!(p.precision(), expected_precision, epsilon = 1e-10, max_relative = 1e-10);

            let mut reversed = terms.clone();
            reversed.reverse();
            let q = Gaussian::product_scaled(&reversed).unwrap();
            assert_relative_eq!(p.mean(), q.mean(), epsilon = 1e-10);
            assert_relative_eq!(p.cov(), q.cov(), epsilon = 1e-10);
        }
    }

    #[test]
    fn log_density_values() {
        let std = g1(0.0, 1.0);
        let c = -0.5 * (2.0 * PI).ln();
        assert_relative_eq!(std.log_density(&DVector::from_element(1, 0.0)).unwrap(), c);
        assert_relative_eq!(
            std.log_density(&DVector::from_element(1, 1.0)).unwrap(),
            c - 0.5,
            epsilon = 1e-15
        );
        let iso = Gaussian::isotropic(DVector::zeros(2), 2.0).unwrap();
        assert_relative_eq!(
            iso.log_density(&DVector::zeros(2)).unwrap(),
            -(2.0 * PI).ln() - 2.0_f64.ln(),
            epsilon = 1e-14
        );
        assert!(std.log_density(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let g = g1(0.7, 0.3);
        let sigma = 0.3_f64.sqrt();
        let n = 20_000;
        let (lo, hi) = (0.7 - 8.0 * sigma, 0.7 + 8.0 * sigma);
        let h = (hi - lo) / n as f64;
        // Composite Simpson rule.
        let f = |x: f64| g.log_density(&DVector::from_element(1, x)).unwrap().exp();
        let mut sum = f(lo) + f(hi);
        for i in 1..n {
            let x = lo + i as f64 * h;
            sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        assert!((sum * h / 3.0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn law_of_total_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cov = random_spd(&mut rng, 3);
        let mean = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let joint = Gaussian::new(mean.clone(), cov.clone()).unwrap();
        let input = 1;
        let marg = Gaussian::new(
            mean.rows(0, input).into_owned(),
            cov.view((0, 0), (input, input)).into_owned(),
        )
        .unwrap();
        let n = 100_000;
        let out = 3 - input;
        // Moment-matched draws: the standard-normal sample is centred and
        // whitened so its empirical mean and covariance are exact.
        let mut z = DMatrix::from_fn(input, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let zbar = z.column_mean();
        for mut c in z.column_iter_mut() {
            c -= &zbar;
        }
        let s = (&z * z.transpose()) / n as f64;
        let ls = CholeskyFactor::new(&s).unwrap();
        let z = ls.lower().solve_lower_triangular(&z).unwrap();
        let l = marg.factor().lower().clone();
        let mut mean_acc = DVector::zeros(out);
        let mut outer_acc = DMatrix::zeros(out, out);
        let mut cond_cov_acc = DMatrix::zeros(out, out);
        for zc in z.column_iter() {
            let q = marg.mean() + &l * zc;
            let c = joint.condition(input, &q).unwrap();
            mean_acc += c.mean();
            outer_acc += c.mean() * c.mean().transpose();
            cond_cov_acc += c.cov();
        }
        let m = mean_acc / n as f64;
        let var_of_mean = outer_acc / n as f64 - &m * m.transpose();
        let total = cond_cov_acc / n as f64 + var_of_mean;
        let sxx = cov.view((input, input), (out, out)).into_owned();
        assert_relative_eq!(total, sxx, epsilon = 1e-6);
    }

    #[test]
    fn repairs_near_singular_once() {
        let g = Gaussian::from_slices(&[0.0, 0.0], &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(g.cov()[(0, 0)] > 1.0);
        assert!(matches!(
            Gaussian::from_slices(&[0.0], &[-1.0]),
            Err(KmpError::NotPositiveDefinite { .. })
        ));
    }
}
