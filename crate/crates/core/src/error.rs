//! Error type shared by every stage of the caching pipeline.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid depth {0}: depth must be positive and finite")]
    InvalidDepth(f64),

    #[error("point lies behind the camera (z = {0})")]
    Behind(f64),

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("relevance score {value} at token {index} is outside [0, 1]")]
    ScoreRange { index: usize, value: f64 },

    #[error("attention row {row} sums to {sum}, expected 1")]
    AttentionNormalization { row: usize, sum: f64 },

    #[error("token {0} is marked for reuse but has no valid remap index")]
    MaskRemapInconsistency(usize),

    #[error("stale cache write: step {attempted} does not advance past {current}")]
    StaleWrite { current: u64, attempted: u64 },

    #[error("ray from token {token} escaped the scene")]
    RenderHole { token: usize },

    #[error("trajectory leaves the scene at step {step}")]
    TrajectoryOutOfBounds { step: usize },

    #[error("episode has no steps")]
    EmptyEpisode,

    #[error("reports are not comparable: {0}")]
    Comparison(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("snapshot format error: {0}")]
    Snapshot(String),
}

impl Error {
    /// Whether the error comes from configuration rather than from a running episode.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidIntrinsics(_) | Error::InvalidPose(_)
        )
    }
}
