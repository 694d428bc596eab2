//! Synthetic data, training, evaluation, ablations and file outputs.

pub mod ablate;
pub mod attn_dump;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod synth;
pub mod train;

pub use config::RunConfig;
pub use model::Model;
