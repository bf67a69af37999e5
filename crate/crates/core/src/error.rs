use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {context}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite {
        context: String,
        step: Option<usize>,
    },

    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("time {t} outside the admissible range [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("reversing an SDE requires a score provider")]
    MissingScore,

    #[error("moment integration became unstable near t = {t}")]
    MomentInstability { t: f64 },

    #[error("optimizer did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error(transparent)]
    Remote(#[from] RemoteError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::UnknownPreset(_) | Error::Serde(_)
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

/// Failures of the remote vector-field adapter. Each variant keeps the raw payload.
#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("remote field timed out after {timeout_ms} ms (request: {request})")]
    Timeout { timeout_ms: u64, request: String },

    #[error("malformed response ({reason}): {payload}")]
    Malformed { reason: String, payload: String },

    #[error("response dimension {found} does not match state dimension {expected}: {payload}")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        payload: String,
    },

    #[error("transport: {0}")]
    Transport(String),
}
