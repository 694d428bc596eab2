use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(String),
    #[error("not a rotation matrix: {0}")]
    NotRotation(String),
    #[error("camera scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid kinematic tree: {0}")]
    InvalidTree(String),
    #[error("joint index {index} out of range (tree has {count} joints)")]
    JointOutOfRange { index: usize, count: usize },
    #[error("model width {width} is not divisible by {heads} heads")]
    IndivisibleWidth { width: usize, heads: usize },
    #[error("clip of {frames} frames exceeds the maximum of {max}")]
    ClipTooLong { frames: usize, max: usize },
    #[error("block topology {topology} is missing its {layer} layer")]
    TopologyMismatch { topology: String, layer: &'static str },
    #[error("regressor for joint {joint} expects input width {expected}, has {actual}")]
    WidthMismatch {
        joint: usize,
        expected: usize,
        actual: usize,
    },
    #[error("degenerate point set: {0}")]
    DegeneratePoints(String),
    #[error("acceleration error needs at least 3 frames, got {0}")]
    TooFewFrames(usize),
    #[error("{what}: expected {expected} joints, got {actual}")]
    JointCount {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite loss in term {term} at step {step}")]
    NonFiniteLoss { term: &'static str, step: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
