use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// A structurally valid input that breaks a data invariant.
    #[error("invalid {field}{}: {message}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    Invalid {
        field: String,
        frame: Option<usize>,
        message: String,
    },

    #[error("robot model: {0}")]
    Model(String),

    #[error("value {value} outside valid range [{min}, {max}] for {what}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("QP primal infeasible at frame {frame}")]
    QpInfeasible { frame: usize },

    #[error("inverse kinematics failed at frame {frame}: residual {residual:.3e} m")]
    IkFailure { frame: usize, residual: f64 },

    #[error("optimal control diverged: {0}")]
    Diverged(String),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, frame: Option<usize>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            frame,
            message: message.into(),
        }
    }

    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
