//! Kernelized movement primitives: learn a probabilistic reference
//! trajectory from demonstrations, predict it through a kernel model, and
//! adapt it to via-points, new durations, blended references and moving
//! task frames.

pub mod database;
pub mod error;
pub mod frames;
pub mod gaussian;
pub mod gmm;
pub mod kernels;
pub mod kmp;
pub mod linalg;
pub mod tooling;

#[cfg(test)]
mod proptests;

pub use database::{ReferenceDatabase, ReferenceEntry};
pub use error::{KmpError, Result};
pub use frames::{LocalFrame, LocalKmpSet, LocalLearnOptions};
pub use gaussian::Gaussian;
pub use gmm::{fit_em, Demo, DemoSet, EmFit, EmOptions, GmmModel};
pub use kernels::{Kernel, KernelSpec};
pub use kmp::{
    default_zeta, predict_time_scaled, superpose, update_database, DesiredPoint, KmpModel, Prediction, TimeScale,
    UpdateAction,
};
