use thiserror::Error;

use crate::qp::QpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("leader prediction covers steps up to {available}, but step {required} is needed")]
    Horizon { required: usize, available: usize },

    #[error("no feasible trajectory: {0}")]
    Infeasible(String),

    #[error("no usable leader prediction at step {now}")]
    NoUsablePrediction { now: usize },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Qp(#[from] QpError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// Rejects NaN and infinities with a message naming the offending quantity.
pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{name} must be finite, got {value}"
        )))
    }
}
