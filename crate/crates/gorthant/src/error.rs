//! Error type shared by all gorthant modules.

use thiserror::Error;

/// Errors produced by the estimators and their supporting linear algebra.
#[derive(Debug, Error)]
pub enum Error {
    /// Cholesky factorization failed even after the escalating jitter ladder.
    #[error("covariance is not positive definite (largest jitter tried: {max_jitter:.3e})")]
    NotPositiveDefinite { max_jitter: f64 },

    /// The covariance block of the active dimensions could not be factorized.
    #[error("active-dimension covariance block is singular: {0}")]
    SingularAnchor(String),

    /// The rejection sampler ran out of candidate draws before collecting
    /// the requested number of truncated samples.
    #[error(
        "rejection sampler exceeded {max_tries} candidate draws with {collected}/{requested} \
         accepted (running acceptance estimate {acceptance:.3e})"
    )]
    AcceptanceTooLow {
        requested: usize,
        collected: usize,
        max_tries: u64,
        acceptance: f64,
    },

    /// Requested a low-discrepancy sequence dimension beyond the built-in table.
    #[error("sequence dimension {dim} unsupported (cap is {max})")]
    DimensionUnsupported { dim: usize, max: usize },

    /// A marginal variance was zero or negative where a positive one is required.
    #[error("zero or negative variance at index {index}")]
    ZeroVariance { index: usize },

    /// Fewer indices carry positive selection weight than the requested draw count.
    #[error("cannot select {requested} dimensions: only {available} have positive weight")]
    InsufficientMass { requested: usize, available: usize },

    /// The payoff showed no overall variance, so no sampling plan exists.
    #[error("payoff variance estimate is not positive; nothing to plan")]
    DegenerateVariance,

    /// Two design points coincide, making the kriging system singular.
    #[error("design points {i} and {j} coincide")]
    DuplicateDesignPoints { i: usize, j: usize },

    /// Input shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Invalid argument combination.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed CSV content.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed binary matrix file.
    #[error("bad matrix file: {0}")]
    BadMatrixFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
