use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("every input vector has (numerically) zero norm")]
    AllZeroInput,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("ambient dimension must be at least 2, got {0}")]
    AmbientTooSmall(usize),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("block [{lo}, {hi}] has {size} points, piecewise degree {degree} needs at least {}", degree + 1)]
    BlockTooSmall {
        lo: usize,
        hi: usize,
        size: usize,
        degree: usize,
    },

    #[error("trigonometric model with empty index set has no basis")]
    EmptySubset,

    #[error("invalid trigonometric index set: {0}")]
    InvalidSubset(String),

    #[error("lambda = {lambda} is outside the analytic domain of the log-Laplace transform")]
    OutOfDomain { lambda: f64 },

    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),

    #[error("invalid partition sizes for chaining: {0}")]
    InvalidPartitionSizes(String),

    #[error("K must be greater than 1, got {0}")]
    KNotGreaterThanOne(f64),

    #[error("delta must lie in (0, 1], got {0}")]
    DeltaOutOfRange(f64),

    #[error("phi(x0) = {0} is smaller than 1")]
    PhiTooSmall(f64),

    #[error("penalty mode `{mode}` cannot be used with a `{family}` collection")]
    ModeFamilyMismatch { mode: String, family: String },

    #[error("penalty condition violated: {0}")]
    ConditionViolated(String),

    #[error("empty model collection")]
    EmptyCollection,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
