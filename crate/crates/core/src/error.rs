use std::path::PathBuf;

use thiserror::Error;
use u2seg_tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content; `field` names the offending header entry.
    #[error("{path}: bad {field}: {detail}")]
    Format { path: PathBuf, field: String, detail: String },

    #[error("config key `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("{what}: shape mismatch: {detail}")]
    Shape { what: &'static str, detail: String },

    /// Spatial extent too small for the network; `min` is the smallest legal extent.
    #[error("input extent {got_h}×{got_w} is below the minimal legal extent {min}×{min} for this network")]
    Extent { min: usize, got_h: usize, got_w: usize },

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy { kind: &'static str, name: String, available: String },

    #[error("non-finite loss at step {step} (epoch {epoch})")]
    NonFinite { step: u64, epoch: usize },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), field: field.into(), detail: detail.into() }
    }

    pub(crate) fn config(key: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config { key: key.into(), detail: detail.into() }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
