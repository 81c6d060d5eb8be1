//! Randomized invariants over the public API.

use crate::frames::LocalFrame;
use crate::gmm::{fit_em_points, GmmComponent, GmmModel};
use crate::kernels::gram;
use crate::kmp::update_database_all;
use crate::linalg::min_eigenvalue;
use crate::tooling::force::{force_sim_step, ForceEvent, ForceParams};
use crate::tooling::io::{load_model, save_model};
use crate::{
    superpose, DesiredPoint, EmOptions, Gaussian, Kernel, KernelSpec, KmpModel, LocalKmpSet, ReferenceDatabase,
    ReferenceEntry, TimeScale, UpdateAction,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn spd(r: &mut ChaCha8Rng, d: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * floor
}

fn vector(r: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| r.random_range(-scale..scale))
}

fn gaussian(r: &mut ChaCha8Rng, d: usize) -> Gaussian {
    Gaussian::new(vector(r, d, 2.0), spd(r, d, 0.2)).unwrap()
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + a.amax().max(b.amax()))
}

fn weights(r: &mut ChaCha8Rng, l: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..l).map(|_| r.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = w[..l - 1].iter().sum();
    w[l - 1] = 1.0 - head;
    w
}

/// Scalar-time database with distinct sorted inputs.
fn time_database(r: &mut ChaCha8Rng, n: usize, o: usize) -> ReferenceDatabase {
    let entries = (0..n)
        .map(|i| {
            let t = (i as f64 + r.random_range(0.2..0.8)) * 0.25;
            ReferenceEntry::new(DVector::from_element(1, t), vector(r, o, 1.0), spd(r, o, 0.05) * 0.1)
        })
        .collect();
    ReferenceDatabase::new(entries).unwrap()
}

fn random_model(seed: u64, n: usize, o: usize) -> KmpModel {
    let mut r = rng(seed);
    let lambda = r.random_range(0.2..2.0);
    let ell = r.random_range(0.3..3.0);
    model_on(seed ^ 0x9e37_79b9, n, o, ell, lambda)
}

fn model_on(seed: u64, n: usize, o: usize, ell: f64, lambda: f64) -> KmpModel {
    let mut r = rng(seed);
    KmpModel::build(time_database(&mut r, n, o), KernelSpec::gaussian(ell).unwrap(), lambda).unwrap()
}

fn rotation(r: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0)).qr().q()
}

fn t(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn product_scaled_is_order_free_and_sums_precisions(seed in any::<u64>(), d in 1usize..4, l in 2usize..5) {
        let mut r = rng(seed);
        let gs: Vec<Gaussian> = (0..l).map(|_| gaussian(&mut r, d)).collect();
        let w = weights(&mut r, l);
        let terms: Vec<(Gaussian, f64)> = gs.iter().cloned().zip(w.iter().copied()).collect();
        let forward = Gaussian::product_scaled(&terms).unwrap();
        let mut reversed = terms.clone();
        reversed.reverse();
        reversed.rotate_left(1);
        let other = Gaussian::product_scaled(&reversed).unwrap();
        prop_assert!((forward.mean() - other.mean()).amax() <= 1e-10 * (1.0 + forward.mean().amax()));
        prop_assert!(close(forward.cov(), other.cov(), 1e-10));
        let sum = gs.iter().zip(&w).fold(DMatrix::zeros(d, d), |acc, (g, wi)| acc + g.precision() * *wi);
        prop_assert!(close(&forward.precision(), &sum, 1e-10));
    }

    #[test]
    fn one_dimensional_density_integrates_to_one(mean in -5.0f64..5.0, sd in 0.05f64..4.0) {
        let g = Gaussian::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, sd * sd)).unwrap();
        let n = 4000;
        let (lo, hi) = (mean - 8.0 * sd, mean + 8.0 * sd);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * g.log_density(&DVector::from_element(1, x)).unwrap().exp();
        }
        prop_assert!((acc * h - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn conditioning_keeps_covariance_symmetric_definite(seed in any::<u64>(), i in 1usize..3, o in 1usize..3) {
        let mut r = rng(seed);
        let joint = gaussian(&mut r, i + o);
        let c = joint.condition(i, &vector(&mut r, i, 3.0)).unwrap();
        let cov = c.cov();
        prop_assert!((cov - cov.transpose()).amax() <= 1e-12 * cov.amax());
        prop_assert!(min_eigenvalue(cov) > 0.0);
    }

    #[test]
    fn single_component_gmr_is_conditioning(seed in any::<u64>(), i in 1usize..3, o in 1usize..3) {
        let mut r = rng(seed);
        let joint = gaussian(&mut r, i + o);
        let model = GmmModel::new(vec![GmmComponent { prior: 1.0, joint: joint.clone() }], i).unwrap();
        let q = vector(&mut r, i, 3.0);
        let a = model.gmr(&q).unwrap();
        let b = joint.condition(i, &q).unwrap();
        prop_assert!((a.mean() - b.mean()).amax() <= 1e-12 * (1.0 + b.mean().amax()));
        prop_assert!(close(a.cov(), b.cov(), 1e-12));
    }

    #[test]
    fn gmr_weights_sum_to_one_and_covariance_is_psd(seed in any::<u64>(), c in 1usize..5) {
        let mut r = rng(seed);
        let w = if c == 1 { vec![1.0] } else { weights(&mut r, c) };
        let components = w.iter().map(|&p| GmmComponent { prior: p, joint: gaussian(&mut r, 3) }).collect();
        let model = GmmModel::new(components, 1).unwrap();
        for _ in 0..5 {
            let q = vector(&mut r, 1, 4.0);
            let (h, _) = model.responsibilities(&q).unwrap();
            prop_assert!((h.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let g = model.gmr(&q).unwrap();
            prop_assert!(min_eigenvalue(g.cov()) >= -1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn em_log_likelihood_never_decreases(seed in any::<u64>(), c in 1usize..4) {
        let mut r = rng(seed);
        let centres: Vec<DVector<f64>> = (0..c).map(|_| vector(&mut r, 2, 3.0)).collect();
        let points: Vec<DVector<f64>> = (0..120)
            .map(|k| &centres[k % c] + vector(&mut r, 2, 0.6))
            .collect();
        let mut previous = f64::NEG_INFINITY;
        for iters in 1..8 {
            let mut opts = EmOptions::new(c, seed);
            opts.max_iter = iters;
            opts.tol = 0.0;
            let fit = fit_em_points(&points, 1, &opts).unwrap();
            let ll = fit.model.log_likelihood(&points).unwrap();
            prop_assert!(ll >= previous - 1e-9 * (1.0 + previous.abs()), "{previous} -> {ll}");
            previous = ll;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn gram_is_symmetric_and_psd(seed in any::<u64>(), n in 1usize..30, i in 1usize..4, o in 1usize..3, derivative in any::<bool>()) {
        let mut r = rng(seed);
        let ell = r.random_range(0.1..3.0);
        let (kernel, inputs): (KernelSpec, Vec<DVector<f64>>) = if derivative {
            let mut ts: Vec<f64> = (0..n).map(|k| k as f64 * 0.1 + r.random_range(0.0..0.05)).collect();
            ts.sort_by(f64::total_cmp);
            (KernelSpec::time_driven(ell, 1e-5).unwrap(), ts.into_iter().map(t).collect())
        } else {
            (KernelSpec::gaussian(ell).unwrap(), (0..n).map(|_| vector(&mut r, i, 2.0)).collect())
        };
        let g = gram(&kernel, &inputs, o);
        prop_assert!((&g - g.transpose()).amax() <= 1e-12);
        prop_assert!(min_eigenvalue(&g) >= -1e-9 * g.amax().max(1.0));
    }

    #[test]
    fn kernel_is_exactly_symmetric(seed in any::<u64>(), d in 1usize..6, ell in 0.01f64..10.0) {
        let mut r = rng(seed);
        let k = KernelSpec::gaussian(ell).unwrap();
        let (a, b) = (vector(&mut r, d, 5.0), vector(&mut r, d, 5.0));
        prop_assert_eq!(k.value(&a, &b), k.value(&b, &a));
    }

    #[test]
    fn prediction_is_linear_in_reference_means(seed in any::<u64>(), n in 2usize..15, o in 1usize..3, alpha in -3.0f64..3.0) {
        let model = random_model(seed, n, o);
        let scaled = model.with_database(model.database().scaled_means(alpha)).unwrap();
        let q = t(n as f64 * 0.125);
        let a = model.predict(&q).unwrap();
        let b = scaled.predict(&q).unwrap();
        prop_assert!((&b.mean - &a.mean * alpha).amax() <= 1e-10 * (1.0 + a.mean.amax()));
        prop_assert!(close(&a.cov, &b.cov, 1e-12));
    }

    #[test]
    fn update_keeps_or_grows_database_by_rule(seed in any::<u64>(), n in 2usize..12, m in 1usize..4) {
        let mut r = rng(seed);
        let db = time_database(&mut r, n, 2);
        let zeta = r.random_range(0.0..0.2);
        let points: Vec<DesiredPoint> = (0..m)
            .map(|_| DesiredPoint::new(t(r.random_range(0.0..n as f64 * 0.25)), vector(&mut r, 2, 1.0), DMatrix::identity(2, 2) * 1e-6).unwrap())
            .collect();
        let (next, actions) = update_database_all(&db, &points, zeta).unwrap();
        let inserted = actions.iter().filter(|a| **a == UpdateAction::Inserted).count();
        prop_assert_eq!(next.len(), db.len() + inserted);
        prop_assert_eq!(actions.len(), m);
    }

    #[test]
    fn superposing_copies_of_one_database_is_identity(seed in any::<u64>(), n in 1usize..10, l in 2usize..4) {
        let mut r = rng(seed);
        let db = time_database(&mut r, n, 2);
        let gammas: Vec<Vec<f64>> = (0..n).map(|_| weights(&mut r, l)).collect();
        let copies = vec![db.clone(); l];
        let mixed = superpose(&copies, &gammas).unwrap();
        for (a, b) in mixed.entries().iter().zip(db.entries()) {
            prop_assert!((&a.mean - &b.mean).amax() <= 1e-10);
            prop_assert!(close(&a.cov, &b.cov, 1e-10));
        }
    }

    #[test]
    fn linear_time_scale_endpoints_and_monotone(src in 0.1f64..50.0, dst in 0.1f64..50.0) {
        let s = TimeScale::linear(src, dst).unwrap();
        prop_assert!(s.tau(0.0).unwrap().abs() <= 1e-12);
        prop_assert!((s.tau(dst).unwrap() - src).abs() <= 1e-12 * src.max(1.0));
        let mut prev = f64::NEG_INFINITY;
        for k in 0..1000 {
            let v = s.tau(dst * k as f64 / 999.0).unwrap();
            prop_assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn projection_round_trip(seed in any::<u64>(), i in 1usize..3, o in 1usize..4, doubled in any::<bool>()) {
        let mut r = rng(seed);
        let frame = LocalFrame::new(rotation(&mut r, i), vector(&mut r, i, 3.0), rotation(&mut r, o), vector(&mut r, o, 3.0)).unwrap();
        let s = vector(&mut r, i, 3.0);
        let xi = vector(&mut r, if doubled { 2 * o } else { o }, 3.0);
        let (sl, xl) = frame.project(&s, &xi).unwrap();
        prop_assert!((frame.unproject_input(&sl).unwrap() - &s).amax() <= 1e-12 * (1.0 + s.amax()));
        prop_assert!((frame.unproject_output(&xl).unwrap() - &xi).amax() <= 1e-12 * (1.0 + xi.amax()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn translating_a_frame_shifts_its_prediction(seed in any::<u64>(), n in 2usize..10, p in 1usize..4, which in 0usize..4) {
        let mut r = rng(seed);
        let models: Vec<KmpModel> = (0..p).map(|k| model_on(seed.wrapping_add(k as u64), n, 3, 1.0, 0.5)).collect();
        let frames: Vec<LocalFrame> = (0..p)
            .map(|_| LocalFrame::time(rotation(&mut r, 3), vector(&mut r, 3, 1.0)).unwrap())
            .collect();
        let set = LocalKmpSet::from_models(frames.clone(), models).unwrap();
        let which = which % p;
        let v = vector(&mut r, 3, 1.0);
        let mut moved = frames;
        moved[which] = moved[which].translated(&v).unwrap();
        let shifted = set.with_frames(moved).unwrap();
        let q = t(r.random_range(0.0..n as f64 * 0.25));
        let before = set.frame_predictions(&q).unwrap();
        let after = shifted.frame_predictions(&q).unwrap();
        for (k, ((ma, ca), (mb, cb))) in before.iter().zip(&after).enumerate() {
            let expected = if k == which { ma + &v } else { ma.clone() };
            prop_assert!((mb - expected).amax() <= 1e-12 * (1.0 + ma.amax()));
            prop_assert!((cb - ca).amax() <= 1e-12 * (1.0 + ca.amax()));
        }
    }

    #[test]
    fn identity_frames_collapse_to_the_model(seed in any::<u64>(), n in 2usize..10, p in 1usize..4) {
        let model = random_model(seed, n, 2);
        let set = LocalKmpSet::from_models(vec![LocalFrame::identity(1, 2); p], vec![model.clone(); p]).unwrap();
        let q = t(n as f64 * 0.1);
        let a = set.local_predict(&q).unwrap();
        let b = model.predict(&q).unwrap();
        prop_assert!((&a.mean - &b.mean).amax() <= 1e-10 * (1.0 + b.mean.amax()));
        // P equal precisions add up.
        prop_assert!(close(&(&a.cov * p as f64), &b.cov, 1e-10));
    }

    #[test]
    fn common_translation_translates_fused_trajectory(seed in any::<u64>(), n in 2usize..10) {
        let mut r = rng(seed);
        let models = vec![model_on(seed, n, 3, 1.0, 0.5), model_on(seed ^ 0x5a5a, n, 3, 1.0, 0.5)];
        let frames = vec![LocalFrame::translation(vector(&mut r, 3, 1.0)), LocalFrame::translation(vector(&mut r, 3, 1.0))];
        let set = LocalKmpSet::from_models(frames, models).unwrap();
        let v = vector(&mut r, 3, 2.0);
        let moved = set.with_frames(set.frames().iter().map(|f| f.translated(&v).unwrap()).collect()).unwrap();
        for k in 0..10 {
            let q = t(k as f64 * n as f64 * 0.025);
            let a = set.local_predict(&q).unwrap();
            let b = moved.local_predict(&q).unwrap();
            prop_assert!((&b.mean - &a.mean - &v).amax() <= 1e-8);
        }
    }

    #[test]
    fn saved_models_predict_bit_identically(seed in any::<u64>(), n in 1usize..12, o in 1usize..3) {
        let model = random_model(seed, n, o);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        for k in 0..10 {
            let q = t(k as f64 * 0.37);
            prop_assert_eq!(model.predict(&q).unwrap(), loaded.predict(&q).unwrap());
        }
    }

    #[test]
    fn force_events_follow_update_semantics(seed in any::<u64>(), magnitude in 0.0f64..40.0) {
        let mut r = rng(seed);
        let model = KmpModel::build(time_database(&mut r, 20, 3), KernelSpec::gaussian(0.5).unwrap(), 0.3).unwrap();
        let dir = vector(&mut r, 3, 1.0).normalize();
        let time = r.random_range(0.5..3.5);
        let event = ForceEvent::at_prediction(&model, time, dir * magnitude).unwrap();
        let params = ForceParams::new(DMatrix::identity(3, 3) * 0.006, 1.0, 10.0).unwrap();
        let zeta = r.random_range(0.0..0.2);
        let out = force_sim_step(&model, &event, &params, zeta).unwrap();
        if magnitude <= 10.0 {
            prop_assert!(!out.applied);
            prop_assert_eq!(out.model.to_document(), model.to_document());
        } else {
            prop_assert!(out.applied);
            prop_assert_eq!(out.actions.len(), 2);
            let inserted = out.actions.iter().filter(|a| **a == UpdateAction::Inserted).count();
            prop_assert_eq!(out.model.database().len(), model.database().len() + inserted);
        }
    }
}
