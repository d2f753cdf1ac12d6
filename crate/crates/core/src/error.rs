use thiserror::Error;

/// Errors produced by the estimators and operator routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grids do not match")]
    GridMismatch,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("matrix exponential overflow (norm {norm:e})")]
    ExpmOverflow { norm: f64 },

    #[error("{rejected} of {total} paths hit a non-finite potential (limit {limit})")]
    TooManyRejections {
        rejected: usize,
        total: usize,
        limit: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::ExpmOverflow { .. } | Error::TooManyRejections { .. }
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
