use thiserror::Error;

use crate::allocation::Allocation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input that could not be read at all.
    #[error("parse error: {0}")]
    Parse(String),

    /// Structurally invalid data (odd row count, mismatched lengths, ...).
    #[error("shape error: {0}")]
    Shape(String),

    /// A covariate column with zero variance cannot be standardized.
    #[error("covariate column {column} has zero variance")]
    DegenerateCovariate { column: usize },

    /// An argument outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Pooled covariance matrix is singular or numerically unusable.
    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    /// Exhaustive enumeration refused; the instance is beyond the guard.
    #[error("instance too large: {0}")]
    TooLarge(String),

    /// Threshold rerandomization exhausted its attempt budget. Carries the
    /// best allocation seen so the caller can still salvage a design.
    #[error(
        "balance threshold {threshold} not met after {attempts} attempts (best seen {best_balance})"
    )]
    ThresholdNotMet {
        threshold: f64,
        attempts: usize,
        best_balance: f64,
        best_allocation: Allocation,
    },

    /// Confidence-interval inversion could not bracket the endpoint.
    #[error("bracket error: {0}")]
    Bracket(String),

    /// Regression design matrix is rank deficient.
    #[error("rank error: {0}")]
    RankDeficient(String),

    /// A failure inside a Monte Carlo replicate, tagged with its index.
    #[error("replicate {replicate} failed: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_replicate(self, replicate: usize) -> Self {
        Error::Replicate {
            replicate,
            source: Box::new(self),
        }
    }
}
