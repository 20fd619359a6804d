use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or image dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller-supplied value is outside its documented domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// Attention-control hook rejected its inputs (quadrant boundary or
    /// cache/config mismatch).
    #[error("attention control error: {0}")]
    Control(String),

    /// A cache was used in the wrong lifecycle state (unfinalized,
    /// already finalized, incomplete).
    #[error("cache state error: {0}")]
    State(String),

    /// Sigma schedule is not strictly decreasing.
    #[error("schedule error: {0}")]
    Schedule(String),

    /// A configured memory budget was exceeded.
    #[error("resource budget exceeded: {0}")]
    Resource(String),

    /// Benchmark suite failed to load or validate.
    #[error("suite load error: {0}")]
    Load(String),

    /// Report aggregation had nothing to aggregate.
    #[error("report error: {0}")]
    Report(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Codec(String),
}
