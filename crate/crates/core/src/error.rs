//! Error type shared across the crate.

use thiserror::Error;

pub type CoreResult<T> = Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("integration blew up at step {step}: {detail}")]
    IntegrationBlowup { step: usize, detail: String },

    #[error("reservoir state became non-finite at step {step}")]
    Instability { step: usize },

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("degenerate topology: {0}")]
    DegenerateTopology(String),

    #[error("rank-deficient system: {0}; use a ridge coefficient lambda > 0")]
    RankDeficient(String),

    #[error("network has no trained readout")]
    Untrained,

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no feasible point: every objective evaluation failed")]
    NoFeasiblePoint,

    #[error("node floor reached: {0}")]
    PruneFloor(String),

    #[error("orchestration error: {0}")]
    Orchestration(String),

    #[error("unsupported model schema version {found} (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }

    /// True for errors that stem from a bad configuration rather than a
    /// numeric failure; the CLI maps these to a distinct exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, CoreError::Config(_))
    }
}
