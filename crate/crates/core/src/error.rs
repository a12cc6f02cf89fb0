use thiserror::Error;

/// Errors raised by the analysis library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensError {
    #[error("matched set `{0}` has no treated unit")]
    ZeroTreated(String),
    #[error("matched set `{0}` has more than one treated unit")]
    MultiTreated(String),
    #[error("matched set `{0}` has fewer than two units")]
    SetTooSmall(String),
    #[error("matched set `{set_id}` has a non-finite outcome at unit {unit}")]
    NonFiniteOutcome { set_id: String, unit: usize },
    #[error("duplicate matched set id `{0}`")]
    DuplicateSetId(String),
    #[error("treated index {index} out of range for matched set `{set_id}` of size {size}")]
    TreatedOutOfRange {
        set_id: String,
        index: usize,
        size: usize,
    },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("scale for the m-statistic is degenerate (must be finite and > 0)")]
    DegenerateScale,
    #[error("assignment index {index} out of range for set {set} of size {size}")]
    IndexOutOfRange {
        set: usize,
        index: usize,
        size: usize,
    },
    #[error("study is not a matched-pair study (set {0} does not have exactly 2 units)")]
    NotPairStudy(usize),
    #[error("k = {k} is out of range [1, {n_sets}]")]
    KOutOfRange { k: usize, n_sets: usize },
    #[error("exact distribution support exceeds {limit} points")]
    SupportTooLarge { limit: usize },
    #[error("full enumeration of {count} assignments exceeds the limit {limit}")]
    EnumerationTooLarge { count: f64, limit: usize },
    #[error("brute force is limited to sets of at most {limit} units (got {size})")]
    SetTooLarge { size: usize, limit: usize },
    #[error("subset enumeration is limited to {limit} sets (got {n_sets})")]
    TooManySubsets { n_sets: usize, limit: usize },
    #[error("engine mismatch: {0}")]
    EngineMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, SensError>;
