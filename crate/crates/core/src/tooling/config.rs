//! Experiment configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{KmpError, Result};
use crate::frames::FrameDocument;
use crate::kernels::{DEFAULT_DELTA, MAX_DELTA};
use crate::tooling::datasets::Preset;
use crate::tooling::io::{read_json, CovarianceOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fit,
    Predict,
    Adapt,
    Superpose,
    Local,
    ForceSim,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Fit,
        Mode::Predict,
        Mode::Adapt,
        Mode::Superpose,
        Mode::Local,
        Mode::ForceSim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Fit => "fit",
            Mode::Predict => "predict",
            Mode::Adapt => "adapt",
            Mode::Superpose => "superpose",
            Mode::Local => "local",
            Mode::ForceSim => "force_sim",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv(PathBuf),
    Preset(Preset),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmConfig {
    pub components: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub length_scale: Option<f64>,
    pub delta: Option<f64>,
}

/// Inputs at which the reference database is extracted. Time-driven data
/// defaults to a uniform grid with one point per demonstration sample;
/// otherwise `sample` draws from the learned input marginal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub points: Option<usize>,
    pub sample: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryConfig {
    #[serde(default = "default_query_points")]
    pub points: usize,
    /// Explicit query inputs; overrides the uniform time grid. Without
    /// them, non-scalar inputs are queried at the reference inputs.
    pub inputs: Option<Vec<Vec<f64>>>,
}

fn default_query_points() -> usize {
    200
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            points: default_query_points(),
            inputs: None,
        }
    }
}

/// A desired point. A mean with half the model's output dimension on a
/// time-driven model constrains position only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesiredPointConfig {
    pub input: Vec<f64>,
    pub mean: Vec<f64>,
    #[serde(default = "default_desired_variance")]
    pub variance: f64,
    /// Row-major covariance; overrides `variance`.
    pub cov: Option<Vec<f64>>,
}

pub fn default_desired_variance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorityConfig {
    /// Two candidates: `γ_1 = exp(−t)`, `γ_2 = 1 − γ_1`.
    ExpDecay,
    /// Same weights at every input.
    Constant(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperposeConfig {
    /// Desired points of each candidate trajectory.
    pub candidates: Vec<Vec<DesiredPointConfig>>,
    pub priority: PriorityConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesConfig {
    /// Per-demonstration, per-frame training frames. Presets with frames
    /// supply their own.
    pub training: Option<Vec<Vec<FrameDocument>>>,
    pub prediction: Vec<FrameDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeScaleConfig {
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceEventConfig {
    pub time: f64,
    pub force: Vec<f64>,
    /// Defaults to the position the current model predicts.
    pub position: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceConfig {
    /// Scalar gain `K_f = gain·I`.
    pub gain: f64,
    pub regulation_time: f64,
    pub threshold: f64,
    #[serde(default = "default_desired_variance")]
    pub position_variance: f64,
    pub events: Vec<ForceEventConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present, must agree with the mode requested on the command line.
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub data: Option<DataSource>,
    /// Saved model to start from instead of learning one.
    pub model: Option<PathBuf>,
    /// Encode position and velocity jointly with a derivative kernel.
    pub time_driven: Option<bool>,
    #[serde(default)]
    pub gmm: GmmConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub lambda: Option<f64>,
    /// Update radius; defaults to `0.05 ×` the median nearest-neighbour
    /// distance of the reference inputs.
    pub zeta: Option<f64>,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub queries: QueryConfig,
    #[serde(default)]
    pub desired_points: Vec<DesiredPointConfig>,
    pub superpose: Option<SuperposeConfig>,
    pub frames: Option<FramesConfig>,
    pub time_scale: Option<TimeScaleConfig>,
    pub force: Option<ForceConfig>,
    #[serde(default)]
    pub covariance_output: CovarianceOutput,
}

/// Parameters a preset fills in when the config leaves them out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetDefaults {
    pub length_scale: f64,
    pub lambda: f64,
    pub time_driven: bool,
    pub components: usize,
    pub reference_points: usize,
    pub sample_reference: bool,
}

pub fn preset_defaults(preset: Preset) -> PresetDefaults {
    match preset {
        Preset::LetterG => PresetDefaults {
            length_scale: 2.0,
            lambda: 1.0,
            time_driven: true,
            components: 10,
            reference_points: 200,
            sample_reference: false,
        },
        Preset::Transportation => PresetDefaults {
            length_scale: 0.5,
            lambda: 10.0,
            time_driven: true,
            components: 6,
            reference_points: 100,
            sample_reference: false,
        },
        Preset::Force => PresetDefaults {
            length_scale: 0.15,
            lambda: 0.3,
            time_driven: false,
            components: 8,
            reference_points: 100,
            sample_reference: false,
        },
        Preset::ThirdHand => PresetDefaults {
            length_scale: 0.5,
            lambda: 2.0,
            time_driven: false,
            components: 6,
            reference_points: 200,
            sample_reference: true,
        },
    }
}

fn positive(name: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x.is_finite() && x > 0.0) => {
            Err(KmpError::validation(format!("{name} must be finite and positive, got {x}")))
        }
        _ => Ok(()),
    }
}

fn check_point(p: &DesiredPointConfig, what: &str) -> Result<()> {
    if p.input.is_empty() || p.mean.is_empty() {
        return Err(KmpError::validation(format!("{what}: input and mean must be non-empty")));
    }
    if p.input.iter().chain(&p.mean).any(|v| !v.is_finite()) {
        return Err(KmpError::validation(format!("{what}: non-finite values")));
    }
    if !(p.variance.is_finite() && p.variance > 0.0) {
        return Err(KmpError::validation(format!("{what}: variance must be positive")));
    }
    if let Some(c) = &p.cov {
        if c.len() != p.mean.len() * p.mean.len() {
            return Err(KmpError::validation(format!(
                "{what}: covariance needs {} entries, got {}",
                p.mean.len() * p.mean.len(),
                c.len()
            )));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Reads and parses a config file; unknown keys are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Preset named by `data`, if any.
    pub fn preset(&self) -> Option<Preset> {
        match &self.data {
            Some(DataSource::Preset(p)) => Some(*p),
            _ => None,
        }
    }

    /// Checks the ranges of every given parameter and the fields `mode`
    /// requires.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(KmpError::validation(format!("config is for mode '{m}', but '{mode}' was requested")));
            }
        }
        positive("kernel.length_scale", self.kernel.length_scale)?;
        positive("lambda", self.lambda)?;
        positive("zeta", self.zeta)?;
        positive("gmm.tol", self.gmm.tol)?;
        if let Some(d) = self.kernel.delta {
            if !(d > 0.0 && d <= MAX_DELTA) {
                return Err(KmpError::validation(format!("kernel.delta must lie in (0, {MAX_DELTA}], got {d}")));
            }
        }
        if self.gmm.components == Some(0) {
            return Err(KmpError::validation("gmm.components must be at least 1"));
        }
        if self.gmm.max_iter == Some(0) {
            return Err(KmpError::validation("gmm.max_iter must be at least 1"));
        }
        if self.reference.points.is_some_and(|n| n < 2) {
            return Err(KmpError::validation("reference.points must be at least 2"));
        }
        if self.queries.inputs.is_none() && self.queries.points < 2 {
            return Err(KmpError::validation("queries.points must be at least 2"));
        }
        if let Some(q) = &self.queries.inputs {
            if q.is_empty() || q.iter().flatten().any(|v| !v.is_finite()) {
                return Err(KmpError::validation("queries.inputs must be non-empty and finite"));
            }
        }
        for (i, p) in self.desired_points.iter().enumerate() {
            check_point(p, &format!("desired_points[{i}]"))?;
        }
        if let Some(ts) = &self.time_scale {
            positive("time_scale.duration", Some(ts.duration))?;
        }

        let has_source = self.data.is_some() || self.model.is_some();
        if !has_source {
            return Err(KmpError::validation("config needs 'data' or 'model'"));
        }
        let learns = self.model.is_none();
        if learns && self.preset().is_none() {
            if self.kernel.length_scale.is_none() {
                return Err(KmpError::validation("kernel.length_scale is required for csv data"));
            }
            if self.lambda.is_none() {
                return Err(KmpError::validation("lambda is required for csv data"));
            }
        }
        match mode {
            Mode::Fit => {
                if self.data.is_none() {
                    return Err(KmpError::validation("mode 'fit' needs 'data'"));
                }
            }
            Mode::Predict => {}
            Mode::Adapt => {
                if self.desired_points.is_empty() {
                    return Err(KmpError::validation("mode 'adapt' needs at least one desired point"));
                }
            }
            Mode::Superpose => {
                let s = self
                    .superpose
                    .as_ref()
                    .ok_or_else(|| KmpError::validation("mode 'superpose' needs a 'superpose' section"))?;
                if s.candidates.len() < 2 {
                    return Err(KmpError::validation("superposition needs at least two candidates"));
                }
                for (l, c) in s.candidates.iter().enumerate() {
                    for (i, p) in c.iter().enumerate() {
                        check_point(p, &format!("superpose.candidates[{l}][{i}]"))?;
                    }
                }
                match &s.priority {
                    PriorityConfig::ExpDecay if s.candidates.len() != 2 => {
                        return Err(KmpError::validation("exp_decay priority needs exactly two candidates"))
                    }
                    PriorityConfig::Constant(g) if g.len() != s.candidates.len() => {
                        return Err(KmpError::validation("constant priority needs one weight per candidate"))
                    }
                    _ => {}
                }
            }
            Mode::Local => {
                if self.data.is_none() {
                    return Err(KmpError::validation("mode 'local' needs 'data'"));
                }
                let f = self
                    .frames
                    .as_ref()
                    .ok_or_else(|| KmpError::validation("mode 'local' needs a 'frames' section"))?;
                if f.prediction.is_empty() {
                    return Err(KmpError::validation("frames.prediction must list at least one frame"));
                }
                if f.training.is_none() && self.preset() != Some(Preset::Transportation) {
                    return Err(KmpError::validation("frames.training is required unless the preset supplies frames"));
                }
            }
            Mode::ForceSim => {
                let f = self
                    .force
                    .as_ref()
                    .ok_or_else(|| KmpError::validation("mode 'force_sim' needs a 'force' section"))?;
                if !f.gain.is_finite() {
                    return Err(KmpError::validation("force.gain must be finite"));
                }
                if !(f.regulation_time.is_finite() && f.regulation_time >= 0.0) {
                    return Err(KmpError::validation("force.regulation_time must be non-negative"));
                }
                if !(f.threshold.is_finite() && f.threshold >= 0.0) {
                    return Err(KmpError::validation("force.threshold must be non-negative"));
                }
                positive("force.position_variance", Some(f.position_variance))?;
                if f.events.is_empty() {
                    return Err(KmpError::validation("force.events must not be empty"));
                }
            }
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.kernel.delta.unwrap_or(DEFAULT_DELTA)
    }

    /// Resolves a path relative to the config file's directory.
    pub fn resolve(base_dir: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }
}
