//! Fixtures shared by the benchmarks.

use kmp_core::gmm::uniform_grid;
use kmp_core::tooling::datasets::letter_g;
use kmp_core::{fit_em, DemoSet, EmOptions, GmmModel, KernelSpec, KmpModel, ReferenceDatabase, ReferenceEntry};
use nalgebra::{DMatrix, DVector};

/// Smooth 2-D reference database over `t ∈ [0, 1]` with `n` entries.
pub fn sine_database(n: usize) -> ReferenceDatabase {
    let entries = uniform_grid(0.0, 1.0, n)
        .into_iter()
        .map(|t| {
            let mean = DVector::from_vec(vec![(6.0 * t).sin(), (4.0 * t).cos()]);
            let cov = DMatrix::identity(2, 2) * (0.01 + 0.02 * t);
            ReferenceEntry::new(DVector::from_element(1, t), mean, cov)
        })
        .collect();
    ReferenceDatabase::new(entries).expect("valid database")
}

pub fn sine_model(n: usize, derivative: bool) -> KmpModel {
    let kernel = if derivative {
        KernelSpec::time_driven(20.0, 1e-5)
    } else {
        KernelSpec::gaussian(20.0)
    }
    .expect("valid kernel");
    let db = sine_database(n);
    let db = if derivative {
        // Pad each entry with a free velocity block.
        let entries = db
            .entries()
            .iter()
            .map(|e| {
                let mut mean = DVector::zeros(4);
                mean.rows_mut(0, 2).copy_from(&e.mean);
                let mut cov = DMatrix::identity(4, 4) * 1.0;
                cov.view_mut((0, 0), (2, 2)).copy_from(&e.cov);
                ReferenceEntry::new(e.input.clone(), mean, cov)
            })
            .collect();
        ReferenceDatabase::new(entries).expect("valid database")
    } else {
        db
    };
    KmpModel::build(db, kernel, 1.0).expect("model builds")
}

/// Letter G demonstrations with velocities.
pub fn letter_g_demos() -> DemoSet {
    letter_g(7).and_then(|d| d.with_velocities()).expect("dataset")
}

pub fn letter_g_gmm(demos: &DemoSet) -> GmmModel {
    fit_em(demos, &EmOptions::new(10, 7)).expect("em fits").model
}

pub fn time_queries(n: usize) -> Vec<DVector<f64>> {
    uniform_grid(0.0, 1.0, n).into_iter().map(|t| DVector::from_element(1, t)).collect()
}
