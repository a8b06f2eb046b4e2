use thiserror::Error;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or graph dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// An API contract was violated (wrong call order, invalid index, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Invalid configuration or parameters.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset, montage, or checkpoint files could not be loaded.
    #[error("load error: {0}")]
    Load(String),

    /// Training aborted (non-finite gradients and the like).
    #[error("training error: {0}")]
    Training(String),

    /// An operation would have produced NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
