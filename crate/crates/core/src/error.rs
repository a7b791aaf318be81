//! Error type shared by every layer of the simulator.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    /// A numeric input or state field was NaN or infinite.
    #[error("non-finite value in `{field}`: {value}")]
    NonFinite { field: String, value: f64 },

    /// A precondition on an argument was violated.
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    /// Scenario text could not be parsed.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// A monitored sample arrived with a timestamp earlier than its predecessor.
    #[error("out-of-order sample: t={t} precedes last sample at t={last}")]
    OutOfOrder { t: f64, last: f64 },

    /// The simulation state became non-finite during a run.
    #[error("runtime fault at tick {tick} (t={t}): {field} = {value}")]
    Runtime {
        tick: u64,
        t: f64,
        field: String,
        value: f64,
    },

    #[error("empty history")]
    EmptyHistory,

    #[error("i/o error: {0}")]
    Io(String),
}

impl SimError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for faults caused by configuration or arguments rather than run-time evolution.
    pub fn is_config_fault(&self) -> bool {
        matches!(self, SimError::Invalid { .. } | SimError::Parse { .. })
    }
}

impl From<std::io::Error> for SimError {
    fn from(err: std::io::Error) -> Self {
        SimError::Io(err.to_string())
    }
}

/// Returns `value` unchanged if finite, otherwise a [`SimError::NonFinite`] naming `field`.
pub(crate) fn ensure_finite(field: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SimError::NonFinite {
            field: field.to_string(),
            value,
        })
    }
}
