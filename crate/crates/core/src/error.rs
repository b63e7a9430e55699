use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulation and control stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time step {dt:e} violates the explicit stability bound {bound:e}")]
    Cfl { dt: f64, bound: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("argument {value} outside the supported range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },

    #[error("transfer function has a pole on the imaginary axis at omega = {omega}")]
    ImaginaryAxisPole { omega: f64 },

    #[error("persistent-excitation window is empty")]
    EmptyWindow,

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("failed to parse config: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("passivity check failed: {0}")]
    NotPassive(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
