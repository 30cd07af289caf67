use thiserror::Error;

/// Failure modes across construction, expansion, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("dimension {dim} does not factor as {left} x {right}")]
    BadFactorization {
        dim: usize,
        left: usize,
        right: usize,
    },

    #[error("state vector has zero norm")]
    ZeroState,

    #[error("state vector must have at least one amplitude")]
    EmptyVector,

    #[error("basis is not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error("matrix is not unitary (max deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("direction must be a unit 3-vector (norm {norm})")]
    NonUnitDirection { norm: f64 },

    #[error("microstate count {n} out of range ({min}..={max})")]
    MicrostateCountOutOfRange { n: usize, min: usize, max: usize },

    #[error("{side} subspace rank {available} too small: construction needs {needed}")]
    InsufficientRank {
        side: &'static str,
        needed: usize,
        available: usize,
    },

    #[error(
        "branch {label} needs {count} slots but no product grid fits wing ranks {left} x {right}"
    )]
    UnrealizableBranchGrid {
        label: String,
        count: usize,
        left: usize,
        right: usize,
    },

    #[error("branch family is not an orthogonal decomposition of the identity: {reason}")]
    InvalidBranchFamily { reason: String },

    #[error("branch {label} of the expansion target is entangled (Schmidt rank {rank})")]
    EntangledBranch { label: String, rank: usize },

    #[error("expansion failed verification: {reason}")]
    FailedVerification { reason: String },

    #[error("expansion carries no outcome labels")]
    UnlabeledExpansion,

    #[error("model is bound to settings {expected} but was queried at {got}")]
    ContextBound { expected: String, got: String },

    #[error("model has infinite support; exact averaging needs a finite ensemble")]
    InfiniteSupport,

    #[error("unitary does not fix the designated microstate (deviation {deviation:.3e})")]
    MicrostateNotFixed { deviation: f64 },

    #[error("ensembles are not comparable: {reason}")]
    MismatchedEnsembles { reason: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
