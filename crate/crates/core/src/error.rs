//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// Construction parameters violate an invariant (cut count below 2,
    /// spacer vector of the wrong length, non-positive base width, ...).
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// An even stage was asked for the half-zero/half-height spacer preset
    /// with an odd cut count.
    #[error("stage {stage}: cut count r = {r} must be even for the preset spacers")]
    OddCutCount { stage: usize, r: usize },

    /// A stage index outside the materialized table was referenced.
    #[error("stage {stage} out of range (table holds stages 1..={j_max})")]
    StageOutOfRange { stage: usize, j_max: usize },

    /// The power is at least the tower height at the requested depth, so no
    /// transition can be resolved there.
    #[error("power {n} >= tower height {height} at depth {depth}; deepen the analysis")]
    DepthTooShallow { n: String, height: String, depth: usize },

    /// A refinement would materialize more ranges than the configured cap.
    #[error("refinement needs {needed} ranges, over the cap of {cap}")]
    CardinalityCap { needed: String, cap: usize },

    /// A height or spacer is not a multiple of the requested modulus.
    #[error("divisibility by {n} fails at stage {stage}")]
    DivisibilityFailed { n: u64, stage: usize },

    /// The sampling window misses too much certified mass.
    #[error("window coverage gap {gap} exceeds tolerance {tolerance}")]
    CoverageTooSmall { gap: String, tolerance: String },

    /// An operation was invoked outside its contract (wrong stage parity,
    /// too few samples, ...).
    #[error("{0}")]
    UsageError(String),
}
