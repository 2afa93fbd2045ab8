//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A copula parameter lies outside its family's admissible domain.
    #[error("invalid parameter for {family} copula: {detail}")]
    ParameterDomain { family: &'static str, detail: String },

    /// An evaluation point is not strictly inside the unit hypercube.
    #[error("point must lie strictly inside (0,1)^d")]
    InvalidPoint,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Rank correlation of a constant (or otherwise degenerate) series.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data format error: {0}")]
    DataFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
