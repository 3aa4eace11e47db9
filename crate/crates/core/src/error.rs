use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad user input: malformed files, inconsistent dimensions, invalid parameters.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("pore space is empty: no pore voxels to cover")]
    EmptyNetwork,

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("newton iteration failed at node {node} (residual {residual:e})")]
    Newton { node: usize, residual: f64 },

    #[error("negative {species} mass {value:e} at node {node}")]
    Negativity {
        node: usize,
        species: &'static str,
        value: f64,
    },

    #[error("at t = {time} days: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
