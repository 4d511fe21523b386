use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline, from tensor kernels up to file IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: String,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    Shape {
        context: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("batch norm needs at least 2 rows in training mode, got {rows}")]
    DegenerateBatch { rows: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("non-finite value in {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingFailure { epoch: usize, reason: String },

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("failed to load sample {sample_id}: {reason}")]
    SampleLoad { sample_id: u64, reason: String },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(axis: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            axis: axis.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn shape(context: impl Into<String>, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
