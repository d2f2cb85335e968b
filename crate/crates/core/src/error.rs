use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer {layer}: {msg}")]
    Layer { layer: usize, msg: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("line search exceeded {max} backtracking steps at iteration {k} (eps = {eps:e}, phi_eps = {phi_eps:e}, grad_norm = {grad_norm:e})")]
    LineSearch {
        max: usize,
        k: usize,
        eps: f64,
        phi_eps: f64,
        grad_norm: f64,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
