use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QutError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("penalty is incompatible with the instance: {0}")]
    IncompatiblePenalty(String),

    /// The observed response admits no constrained null MLE.
    #[error("response lies outside the existence domain of the null MLE")]
    OutsideDomain,

    #[error("maximum likelihood estimate does not exist: {0}")]
    NonExistent(String),

    #[error("design is rank deficient: {0}")]
    RankDeficient(String),

    #[error("residual norm vanished; the fit interpolates the response")]
    Interpolation,

    #[error("saturated model: {0}")]
    Saturated(String),

    #[error("best-subset enumeration is capped at {cap} columns, got {p}")]
    TooManyColumns { p: usize, cap: usize },

    #[error("the upper quantile is infinite ({infinite_fraction} of null draws fell outside the domain)")]
    QuantileInfinite { infinite_fraction: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for QutError {
    fn from(e: std::io::Error) -> Self {
        QutError::Io(e.to_string())
    }
}

impl From<csv::Error> for QutError {
    fn from(e: csv::Error) -> Self {
        QutError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for QutError {
    fn from(e: serde_json::Error) -> Self {
        QutError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, QutError>;
