use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the thermometry pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input failed schema or invariant checks. `field` names the offending key.
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },

    /// Arguments are well-formed but outside an operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Linear algebra breakdown (singular system, indefinite covariance).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("solver diverged at t = {time} s (|u| = {magnitude:.3e} degC)")]
    SolverDivergence { time: f64, magnitude: f64 },

    /// Failure while propagating one quadrature node.
    #[error("quadrature node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. } | Error::Domain(_) | Error::Parse(_) => 2,
            Error::Numerical(_) | Error::SolverDivergence { .. } => 3,
            Error::Node { source, .. } => source.exit_code(),
            Error::Io { .. } | Error::Csv(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
