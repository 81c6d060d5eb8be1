use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use kmp_core::tooling::config::Mode;
use kmp_core::tooling::experiment::output_dir;
use kmp_core::tooling::{run_experiment, ExperimentConfig};
use kmp_core::KmpError;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Command {
    /// Fit the GMM and reference database, then save them.
    Fit,
    /// Learn (or load) a model and write the predicted trajectory.
    Predict,
    /// Insert desired points and write the adapted trajectory.
    Adapt,
    /// Mix adapted candidate trajectories by priority.
    Superpose,
    /// Learn one model per frame and fuse them for new frames.
    Local,
    /// Replay scripted force events against a time-driven model.
    ForceSim,
}

impl From<Command> for Mode {
    fn from(c: Command) -> Mode {
        match c {
            Command::Fit => Mode::Fit,
            Command::Predict => Mode::Predict,
            Command::Adapt => Mode::Adapt,
            Command::Superpose => Mode::Superpose,
            Command::Local => Mode::Local,
            Command::ForceSim => Mode::ForceSim,
        }
    }
}

/// Kernelized movement primitives experiment runner.
#[derive(Debug, Parser)]
#[command(name = "kmp", version)]
struct Cli {
    #[arg(value_enum)]
    mode: Command,
    /// Experiment config (JSON). Relative paths inside resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`, then `kmp_output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<(), KmpError> {
    let mut config = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let base_dir = cli.config.parent().unwrap_or(Path::new("."));
    let out = output_dir(&config, base_dir, cli.out.as_deref());
    let mode = Mode::from(cli.mode);
    log::info!("running {mode} with seed {} into {}", config.seed, out.display());
    let summary = run_experiment(&config, mode, base_dir, &out)?;
    for f in &summary.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(EXIT_NUMERICAL)
            } else {
                ExitCode::from(EXIT_VALIDATION)
            }
        }
    }
}
