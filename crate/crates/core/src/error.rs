use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {found} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("invalid pairing plan: {0}")]
    InvalidPlan(String),

    #[error("an even number of units is required, got {0}")]
    OddUnitCount(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("at least {required} pairs are required, got {found}")]
    TooFewPairs { required: usize, found: usize },

    #[error("singular design in {context}: {hint}")]
    Singular { context: &'static str, hint: String },

    #[error("penalty loading is zero for column {column}")]
    ZeroLoading { column: usize },

    #[error("normal quantile argument {0} outside (0, 1)")]
    QuantileDomain(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
