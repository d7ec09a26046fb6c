//! Error types shared across the crate.

use num::BigUint;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong shape for the operation.
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Negative binomial moments with variance below the mean.
    #[error("invalid dispersion: variance {variance} < mean {mean}")]
    InvalidDispersion { mean: f64, variance: f64 },

    /// A condition label that is not part of the sample metadata.
    #[error("unknown condition label: {0}")]
    UnknownCondition(String),

    /// Input failed a validation rule (duplicate ids, out-of-range values, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The composition space is too large to enumerate; use the Monte Carlo
    /// estimator instead.
    #[error(
        "exact enumeration infeasible: {count} compositions exceed the cap of {cap}; \
         use the Monte Carlo estimator"
    )]
    InfeasibleEnumeration { count: BigUint, cap: u64 },

    /// Observed composition total does not match the conditional law.
    #[error("composition sum mismatch: law conditions on total {expected}, observed sums to {actual}")]
    SumMismatch { expected: u64, actual: u64 },

    /// A computation produced no usable probability mass.
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    /// A delimited input file could not be parsed.
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    /// Exact computation exceeded its wall-clock deadline (benchmark harness).
    #[error("exact computation timed out after {seconds:.1} s")]
    Timeout { seconds: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code for the CLI: 1 for configuration/parse problems, 2 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::InvalidInput(_)
            | Error::DimensionMismatch { .. }
            | Error::UnknownCondition(_) => 1,
            _ => 2,
        }
    }
}
