//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or topology do not line up.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates an operation precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// An operation was called in the wrong order (e.g. backward with no recorded forward).
    #[error("state error: {0}")]
    State(String),

    /// The fading coefficient is too small to equalize.
    #[error("deep fade: |h| = {magnitude:e} is below {threshold:e}")]
    DeepFade { magnitude: f64, threshold: f64 },

    /// Least-squares system is rank deficient.
    #[error("solver error: {0}")]
    Solver(String),

    /// A formula was invoked outside the conditions under which it holds.
    #[error("contract error: {0}")]
    Contract(String),

    /// Training produced a non-finite value.
    #[error("numerical error: {0}")]
    NonFinite(String),

    /// The pragmatic classifier did not reach the requested accuracy.
    #[error("classifier accuracy {achieved:.4} below floor {floor:.4} after {epochs} epochs")]
    AccuracyFloor {
        achieved: f64,
        floor: f64,
        epochs: usize,
    },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
