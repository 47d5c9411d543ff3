use thiserror::Error;

pub type Result<T> = std::result::Result<T, SpectraError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectraError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what} failed to converge: {detail}")]
    Convergence { what: String, detail: String },

    #[error("fixed point diverged: q = {last_q:e} exceeded ceiling {ceiling:e}")]
    Divergence { last_q: f64, ceiling: f64 },

    #[error("no bracket: {0}")]
    Bracket(String),

    #[error("pole: {0}")]
    Pole(String),

    #[error("argument {z} lies on the support of the D^2 distribution (distance {distance:e})")]
    OnSupport { z: String, distance: f64 },

    #[error("{0}")]
    Unsupported(String),

    #[error("branch lost at continuation step {step} (z = {z}): {detail}")]
    BranchLoss { step: usize, z: String, detail: String },

    #[error("{failed} of {total} grid points failed, above the 5% budget")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("numerical overflow: {0}")]
    Overflow(String),
}
