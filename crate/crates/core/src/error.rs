use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error in {file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    /// Panel invariants are violated; one message per offending unit.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    /// A least-squares subproblem is rank deficient or singular.
    #[error("ill-posed problem for unit `{unit}`: {message}")]
    IllPosed { unit: String, message: String },

    #[error("insufficient sample for unit `{unit}`: {message}")]
    SampleSize { unit: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn ill_posed(unit: impl Into<String>, message: impl Into<String>) -> Self {
        Error::IllPosed {
            unit: unit.into(),
            message: message.into(),
        }
    }

    pub(crate) fn sample_size(unit: impl Into<String>, message: impl Into<String>) -> Self {
        Error::SampleSize {
            unit: unit.into(),
            message: message.into(),
        }
    }

    /// Re-labels unit-scoped errors with a concrete unit id.
    pub(crate) fn for_unit(self, unit: &str) -> Self {
        match self {
            Error::IllPosed { message, .. } => Error::IllPosed {
                unit: unit.to_string(),
                message,
            },
            Error::SampleSize { message, .. } => Error::SampleSize {
                unit: unit.to_string(),
                message,
            },
            Error::Domain(msg) => Error::Domain(format!("unit `{unit}`: {msg}")),
            other => other,
        }
    }
}
