use thiserror::Error;

/// Errors raised by the optimizer, the learning loop and the harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpcError {
    /// `R_d + H` stayed ill-conditioned after every regularization doubling.
    #[error("matrix is not invertible (condition number {condition:e} after {doublings} doublings of R_d)")]
    NonInvertible { condition: f64, doublings: u32 },

    /// A loss value, iterate or closed-loop state stopped being finite (or left its bound).
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unknown basis preset `{0}`")]
    UnknownPreset(String),

    #[error("unknown plant `{0}`")]
    UnknownPlant(String),

    #[error("data pool is empty")]
    PoolEmpty,

    #[error("stage {0} needs successor weights")]
    MissingSuccessorWeights(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration problem; `key` names the offending entry.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl LpcError {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        LpcError::DimensionMismatch {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        LpcError::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for LpcError {
    fn from(e: std::io::Error) -> Self {
        LpcError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LpcError>;
