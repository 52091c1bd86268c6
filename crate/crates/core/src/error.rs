//! Error type shared across the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the dispatch engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates one of its documented constraints.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The CSV file is structurally unusable (missing column, bad header).
    #[error("csv schema error: {0}")]
    Schema(String),

    /// A CSV cell could not be parsed.
    #[error("csv parse error at row {row}: {message}")]
    Csv { row: usize, message: String },

    /// A record violates a physical constraint (negative demand or generation,
    /// duplicate or gapped timestamps).
    #[error("data validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    /// The series does not contain enough records for the requested operation.
    #[error("series too short: need at least {needed} records, have {available}")]
    SeriesTooShort { needed: usize, available: usize },

    /// A state window would reach outside the series.
    #[error("state window out of range at t={t}: needs indices {lo}..={hi}, series has {len} records")]
    WindowOutOfRange { t: usize, lo: i64, hi: usize, len: usize },

    /// Tensor (or state vector) dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A battery power command violates the feasibility interval by more than
    /// the contract tolerance.
    #[error("battery power {power_kw} kW violates feasibility bounds [{lo_kw}, {hi_kw}] kW")]
    InfeasiblePower { power_kw: f64, lo_kw: f64, hi_kw: f64 },

    /// A learning step was asked to operate on an empty batch.
    #[error("empty batch")]
    EmptyBatch,

    /// The replay memory holds fewer experiences than one mini-batch.
    #[error("not enough stored experience: have {have}, need {need}")]
    NotEnoughExperience { have: usize, need: usize },

    /// Enumeration horizon beyond the exhaustive-search cap.
    #[error("horizon {0} exceeds the exhaustive enumeration cap of {max}", max = crate::eval::MAX_EXHAUSTIVE_HORIZON)]
    HorizonTooLarge(usize),

    /// The SOC discretization grid is degenerate.
    #[error("SOC grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),

    /// A statistics window does not fit inside the trace it is applied to.
    #[error("window {start}..{end} exceeds trace length {len}")]
    TraceWindow { start: usize, end: usize, len: usize },

    /// A checkpoint file is malformed or inconsistent.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Plain I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
