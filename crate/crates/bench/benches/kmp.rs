use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kmp_bench::{letter_g_demos, letter_g_gmm, sine_database, sine_model, time_queries};
use kmp_core::kmp::update_database;
use kmp_core::{fit_em, DesiredPoint, EmOptions, KernelSpec, KmpModel};
use nalgebra::{DMatrix, DVector};
use std::hint::black_box;

fn build(c: &mut Criterion) {
    let mut g = c.benchmark_group("build");
    g.sample_size(10);
    for n in [50, 100, 200] {
        let db = sine_database(n);
        let kernel = KernelSpec::gaussian(20.0).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &db, |b, db| {
            b.iter(|| KmpModel::build(db.clone(), kernel, 1.0).unwrap())
        });
    }
    g.finish();
}

fn predict(c: &mut Criterion) {
    let mut g = c.benchmark_group("predict");
    for derivative in [false, true] {
        let model = sine_model(200, derivative);
        let q = DVector::from_element(1, 0.437);
        let label = if derivative { "time_driven" } else { "plain" };
        g.bench_function(BenchmarkId::new("mean", label), |b| b.iter(|| model.predict_mean(black_box(&q)).unwrap()));
        g.bench_function(BenchmarkId::new("mean_cov", label), |b| b.iter(|| model.predict(black_box(&q)).unwrap()));
    }
    g.finish();
}

fn adapt(c: &mut Criterion) {
    let model = sine_model(200, false);
    let point = DesiredPoint::new(DVector::from_element(1, 0.5), DVector::from_vec(vec![0.3, -0.2]), DMatrix::identity(2, 2) * 1e-6).unwrap();
    let mut g = c.benchmark_group("adapt");
    g.sample_size(10);
    g.bench_function("update_and_rebuild", |b| {
        b.iter(|| {
            let (db, _) = update_database(model.database(), &point, 1e-3).unwrap();
            model.with_database(db).unwrap()
        })
    });
    g.finish();
}

fn gmm(c: &mut Criterion) {
    let demos = letter_g_demos();
    let model = letter_g_gmm(&demos);
    let queries = time_queries(200);
    let mut g = c.benchmark_group("gmm");
    g.bench_function("gmr_200", |b| b.iter(|| queries.iter().map(|q| model.gmr(q).unwrap()).count()));
    g.sample_size(10);
    g.bench_function("fit_em_letter_g", |b| b.iter(|| fit_em(&demos, &EmOptions::new(10, 7)).unwrap()));
    g.finish();
}

criterion_group!(benches, build, predict, adapt, gmm);
criterion_main!(benches);
