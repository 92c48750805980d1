//! Crate-wide error type.

/// Errors produced by the balancing engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or lengths of two operands do not match.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// An operation received an empty input it cannot work with.
    #[error("empty input: {0}")]
    EmptyInput(String),
    /// A matrix violates its conditioning requirements.
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
    /// A non-finite value appeared where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Group statistics were requested for a group that was never observed.
    #[error("missing group statistics: {0}")]
    MissingGroup(String),
    /// Every per-reward gradient was flagged as zero; no update is possible.
    #[error("no gradient signal: {0}")]
    NoSignal(String),
    /// A batch cannot be partitioned into the requested shards.
    #[error("shard error: {0}")]
    Shard(String),
    /// Ranks that must agree produced different results.
    #[error("synchronization violation: {0}")]
    SyncViolation(String),
    /// An integrated trajectory left the sane region of state space.
    #[error("trajectory diverged: {0}")]
    Divergence(String),
    /// A configuration file or value is invalid.
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
