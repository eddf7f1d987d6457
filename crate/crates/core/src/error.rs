//! Crate-wide error taxonomy.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Quaternion norm too small to define a direction.
    #[error("quaternion norm {norm:e} is below {limit:e}; no usable direction")]
    NearZeroQuaternion { norm: f64, limit: f64 },

    /// An input that must be unit-norm is not.
    #[error("quaternion norm {norm} deviates from 1 by more than {tol:e}")]
    NotUnitQuaternion { norm: f64, tol: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The requested holdout split cannot be placed.
    #[error("holdout split infeasible: {0}")]
    InfeasibleSplit(String),

    #[error("unknown scene `{0}`")]
    UnknownScene(String),

    #[error("scene `{0}` is already registered")]
    DuplicateScene(String),

    #[error("cannot sample a batch from an empty dataset")]
    EmptyDataset,

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("serialization: {0}")]
    Serialization(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }
}
