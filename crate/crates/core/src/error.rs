//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A tensor operation received shapes it cannot combine.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An architecture failed validation against its search space.
    /// Each entry names the layer and field that violated a constraint.
    #[error("invalid architecture: {0:?}")]
    InvalidArchitecture(Vec<crate::arch::Violation>),

    /// An encoded architecture string could not be parsed. `position` is the
    /// byte offset of the first malformed token.
    #[error("decode error at byte {position}: {message}")]
    Decode { position: usize, message: String },

    /// Checked integer arithmetic overflowed.
    #[error("arithmetic overflow in {0}")]
    Overflow(String),

    /// An enumeration would exceed its configured cap.
    #[error("enumeration of {total} architectures exceeds cap {cap}")]
    EnumerationTooLarge { total: u128, cap: u128 },

    /// A rank statistic is undefined because one input is entirely tied.
    #[error("rank statistic undefined: {0}")]
    DegenerateRanks(String),

    /// Not enough data to perform the operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A non-finite value surfaced during numerical work.
    #[error("non-finite value in {context}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { context: String, step: Option<usize> },

    /// A serialized artifact is malformed (bad magic, truncation, bad field).
    #[error("format error: {0}")]
    Format(String),

    /// No architecture satisfies the search constraints. The suggestion is
    /// the smallest relaxation that admits at least one candidate.
    #[error(
        "no feasible architecture; smallest feasible budget is \
         flops={suggested_flops}, params={suggested_params}"
    )]
    EmptyFeasibleSet {
        suggested_flops: u64,
        suggested_params: u64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
