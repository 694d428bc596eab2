//! Multi-level attention encoder-decoder for video-based 3D human pose and
//! shape estimation.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors with reverse-mode differentiation and Adam.
//! * [`geometry`]: 6D / axis-angle / matrix rotations and the weak-perspective camera.
//! * [`kinematics`]: the 24-joint kinematic tree, shape-conditioned rest pose and
//!   forward kinematics.
//! * [`attention`]: spatial, temporal and coupled multi-head self-attention,
//!   the spatial-temporal encoder blocks and the stacked encoder.
//! * [`decoders`]: the kinematic topology decoder, the iterative feedback
//!   baseline and the glue that turns parameters into joints.
//! * [`metrics`]: training losses and MPJPE / PA-MPJPE / acceleration error.
//! * [`harness`]: synthetic motion clips, two-stage training, evaluation,
//!   ablations, checkpoints and attention dumps.

pub mod attention;
pub mod decoders;
mod error;
pub mod geometry;
pub mod harness;
pub mod kinematics;
pub mod metrics;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
