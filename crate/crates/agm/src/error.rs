//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by graph construction, solvers, training, and data handling.
#[derive(Debug, Error)]
pub enum AgmError {
    /// The edge list does not describe a rooted tree.
    #[error("invalid tree: {0}")]
    InvalidTree(String),

    /// A loss specification or loss matrix violates its invariants.
    #[error("invalid loss: {0}")]
    InvalidLoss(String),

    /// Shapes of parameters, features, or marginals do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An input contains NaN or infinite values.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// Transport marginals do not carry the same total mass.
    #[error("marginal mismatch: {0}")]
    MarginalMismatch(String),

    /// The exhaustive oracle refuses instances with too many joint assignments.
    #[error("instance too large for exhaustive solve: {assignments} assignments exceed cap {cap}")]
    InstanceTooLarge { assignments: usize, cap: usize },

    /// Linear-program solver failure (infeasible, unbounded, or stalled).
    #[error("linear program: {0}")]
    Lp(String),

    /// Training was asked to run on an empty dataset.
    #[error("empty dataset")]
    EmptyDataset,

    /// Training aborted (e.g. too many inner-solver failures in one epoch).
    #[error("training failed: {0}")]
    Training(String),

    /// A dataset or model file did not parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An experiment or solver configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AgmError>;
