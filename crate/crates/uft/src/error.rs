//! Crate-wide error type. Variants map onto the CLI exit codes documented
//! in `--help` (2 usage, 3 I/O, 4 numeric failure, 5 contract violation).

use std::path::PathBuf;

use crate::numerics::DType;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("dtype mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DtypeMismatch {
        op: &'static str,
        lhs: DType,
        rhs: DType,
    },

    /// Invalid configuration or violated call contract.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    /// Non-finite values, diverged training, failed numeric checks.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("autodiff: {0}")]
    Autodiff(&'static str),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {}: {why}", path.display())]
    Parse { path: PathBuf, why: String },
}

impl Error {
    pub fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code for the CLI: 3 I/O, 4 numeric, 5 contract violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Parse { .. } => 3,
            Error::Numeric(_) => 4,
            Error::ShapeMismatch { .. }
            | Error::DtypeMismatch { .. }
            | Error::Invalid { .. }
            | Error::Autodiff(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
