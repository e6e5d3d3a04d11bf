use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training shard is empty")]
    EmptyShard,

    #[error("layer {layer} has no batch normalization but is prunable")]
    MissingBatchNorm { layer: usize },

    #[error("removal would empty prunable layer {layer}")]
    EmptyLayer { layer: usize },

    #[error("unit ({layer}, {unit}) is not valid for the parent shape")]
    InvalidUnit { layer: usize, unit: usize },

    #[error("global indexes reference different parent shapes")]
    MismatchedParents,

    #[error("duplicate interpolation abscissa {0}")]
    DuplicateAbscissa(f64),

    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },

    #[error("no pending update times to flush")]
    EmptyPending,

    #[error("heterogeneity needs at least 2 workers, got {0}")]
    TooFewWorkers(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
