use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("loss {loss} lies outside the admissible range [0, {bound}]")]
    LossOutOfRange { loss: f64, bound: f64 },

    #[error("the exact plus function has no derivative; use a subgradient selector")]
    ExactHasNoDerivative,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("model `{model}` is incompatible with {task} data")]
    IncompatibleTask { model: String, task: String },

    #[error("feasible region is unbounded but `{0}` needs a finite diameter")]
    UnboundedRegion(&'static str),

    #[error("{path}: row {row}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("{path}: row {row}: expected {expected} features, found {found}")]
    RowDimension {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("empty dataset{0}")]
    EmptyDataset(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("report: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
