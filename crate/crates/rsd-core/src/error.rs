use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric: |sigma[{i}][{j}] - sigma[{j}][{i}]| = {gap:e} exceeds tolerance")]
    NotSymmetric { i: usize, j: usize, gap: f64 },

    #[error("matrix is not positive definite (triangular factorization failed)")]
    NotPositiveDefinite,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    BadDimension { expected: usize, got: usize },

    #[error("matrix entry at [{i}][{j}] is not finite")]
    NonFiniteEntry { i: usize, j: usize },

    #[error("coordinate {index} out of range for n = {n}")]
    BadIndex { index: usize, n: usize },

    #[error("coordinate {index} already appears in the elimination history")]
    IndexInHistory { index: usize },

    #[error("coordinate {index} is not in the active set")]
    IndexNotActive { index: usize },

    #[error("cannot eliminate the last active coordinate")]
    LastCoordinate,

    #[error("active state inconsistent with input: expected length {expected}, got {got}")]
    InconsistentState { expected: usize, got: usize },

    #[error("transform is not strictly increasing (grid check failed near u = {at})")]
    NotIncreasing { at: f64 },

    #[error("bad transform parameter: {0}")]
    BadParameter(String),

    #[error("threshold profile is not non-increasing at position {position}")]
    NotNonIncreasing { position: usize },

    #[error("threshold profile invalid: {0}")]
    BadThresholds(String),

    #[error("active score set is empty")]
    EmptyActiveSet,

    #[error("score for coordinate {index} is not finite")]
    NonFiniteScore { index: usize },

    #[error("alpha must lie strictly within (0, 1), got {0}")]
    BadAlpha(f64),

    #[error("too few replicates: need at least {needed}, got {got}")]
    TooFewReps { needed: usize, got: usize },

    #[error("theta grids do not match: {0}")]
    GridMismatch(String),

    #[error("scan grid invalid: {0}")]
    BadGrid(String),

    #[error("expected an accept/reject pair: {0}")]
    NotAnAcceptRejectPair(String),
}

pub type Result<T> = std::result::Result<T, Error>;
