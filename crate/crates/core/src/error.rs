use thiserror::Error;

/// Error variants shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A point fell outside the unit interval.
    #[error("point {x} lies outside [0, 1]")]
    OutOfDomain { x: f64 },

    /// A map or operator index outside the constructed range.
    #[error("index {k} out of range (chain length {len})")]
    IndexOutOfRange { k: usize, len: usize },

    /// Configuration rejected during validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A branch violates the uniform expansion bound.
    #[error("branch slope {slope} violates uniform expansion (need >= 1 + 1e-9)")]
    NotExpanding { slope: f64 },

    /// The pushed density dropped below the division guard, so the
    /// normalized operator cannot be applied.
    #[error("(MIN) failure at index {k}: pushed density has a cell at {min:.3e}")]
    MinFailure { k: usize, min: f64 },

    /// A variance needed for normalization is zero.
    #[error("degenerate variance at horizon {n}")]
    DegenerateVariance { n: usize },

    /// Two sample sets that must match in size do not.
    #[error("sample counts differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// Exact assignment was requested above the configured cap.
    #[error("ensemble size {k} exceeds the exact-assignment cap {cap}; use entropic mode")]
    ExactCapExceeded { k: usize, cap: usize },

    /// Sinkhorn iterations ran out before the marginals converged.
    #[error("Sinkhorn did not converge in {iterations} iterations (marginal residual {residual:.3e})")]
    SinkhornNotConverged { iterations: usize, residual: f64 },

    /// A binary cache file does not match the requested key.
    #[error("cache mismatch: {0}")]
    CacheMismatch(String),

    /// Malformed binary or text payload.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
