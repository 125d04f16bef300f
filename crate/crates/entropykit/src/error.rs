//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by parsing, estimation, and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Input schema problems that make a whole file unusable (bad header,
    /// unknown timezone, malformed matrix file, ...).
    #[error("schema error: {0}")]
    Schema(String),

    /// More than the configured fraction of records was rejected.
    #[error("corrupt input: {rejected} of {total} records rejected (threshold {threshold})")]
    CorruptInput {
        rejected: usize,
        total: usize,
        threshold: f64,
    },

    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid transition matrix: {0}")]
    InvalidMatrix(String),

    /// Too few observations to estimate the requested quantity.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Power iteration hit its cap without plain or Cesaro convergence.
    #[error("no stationary distribution: {0}")]
    NoStationaryDistribution(String),

    /// Stationary distribution exists but is not unique (reducible or
    /// periodic chain), so the steady-state entropy production is undefined.
    #[error("reducible or periodic chain: {0}")]
    ReducibleChain(String),

    /// A transition with positive forward flux and zero reverse flux.
    #[error("infinite entropy production: one-way transition {from} -> {to}")]
    InfiniteEntropyProduction { from: String, to: String },

    /// Non-finite objective or gradient during training.
    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
