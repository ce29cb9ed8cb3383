//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes, reported with both operand shapes.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller violated an operation's contract (bad index, non-scalar
    /// loss, double backward, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed dataset or checkpoint file.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    /// Invalid run configuration (unknown key, missing value, bad type).
    #[error("config error: {0}")]
    Config(String),

    /// A forward pass produced NaN/Inf; `stage` names the first offender.
    #[error("non-finite values produced at stage '{stage}'")]
    NonFinite { stage: String },

    /// A gradient went non-finite during optimization.
    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGrad(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
