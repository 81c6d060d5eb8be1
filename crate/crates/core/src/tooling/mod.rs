//! Data files, experiment configs, bundled datasets and the simulated
//! force loop used by the command-line runner.

pub mod config;
pub mod datasets;
pub mod experiment;
pub mod force;
pub mod io;

pub use config::{ExperimentConfig, Mode};
pub use datasets::Preset;
pub use experiment::{run_experiment, RunSummary};
pub use force::{force_sim_step, ForceEvent, ForceParams};
pub use io::{load_demos, CovarianceOutput};
