use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension {0} not supported, want 1..=3")]
    BadDimension(usize),
    #[error("grid side must be >= 1")]
    EmptyGrid,
    #[error("kernel parameter out of range: {0}")]
    KernelParam(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("state space has {states} configurations, cap is {cap}")]
    StateSpaceTooLarge { states: u128, cap: u128 },
    #[error("invalid fuzzy partition: {0}")]
    BadPartition(String),
    #[error("invalid subvolume: {0}")]
    BadSubvolume(String),
    #[error("color count must be in 1..=255, got {0}")]
    BadColorCount(usize),
    #[error("profile not realizable: {0}")]
    Infeasible(String),
    #[error("no bad profile exists for this (beta, partition); kernels stay continuous")]
    NoBadPoint,
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
