use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite input")]
    NonFinite,
    #[error("state is identically zero")]
    ZeroState,
    #[error("no sign change of M(s*u) on [{lo:e}, {hi:e}]: {reason}")]
    NoSignChange { lo: f64, hi: f64, reason: String },
    #[error("nonlinearity is not of separable-plus-product form")]
    NotSeparable,
    #[error("solver did not converge: {0}")]
    NotConverged(String),
    #[error("ill-conditioned multiplier fit")]
    IllConditioned,
}

pub type Result<T> = std::result::Result<T, Error>;
