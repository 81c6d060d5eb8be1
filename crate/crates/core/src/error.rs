use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = KmpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KmpError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },

    #[error("cannot condition: input block is singular or ill-conditioned (condition estimate {condition:e})")]
    Conditioning { condition: f64 },

    #[error("EM needs at least {required} points for {components} components, got {points}")]
    TooFewPoints {
        points: usize,
        components: usize,
        required: usize,
    },

    #[error("EM collapsed: component {component} has responsibility mass {mass:e}; refit with different seed or fewer components")]
    EmCollapse { component: usize, mass: f64 },

    #[error("Gram factorization failed: reference entries {first} and {second} make K + lambda*Sigma singular")]
    Factorization { first: usize, second: usize },

    #[error("demonstrations have unequal lengths: {lengths:?}")]
    RaggedDemos { lengths: Vec<usize> },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported document version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<KmpError>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<KmpError>,
    },
}

impl KmpError {
    pub fn validation(msg: impl Into<String>) -> Self {
        KmpError::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KmpError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        KmpError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn in_frame(self, frame: usize) -> Self {
        KmpError::Frame {
            frame,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics (factorizations, EM) as opposed to
    /// malformed input. The CLI maps these to distinct exit codes.
    pub fn is_numerical(&self) -> bool {
        match self {
            KmpError::NotPositiveDefinite { .. }
            | KmpError::Conditioning { .. }
            | KmpError::EmCollapse { .. }
            | KmpError::Factorization { .. } => true,
            KmpError::Stage { source, .. } | KmpError::Frame { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(KmpError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
