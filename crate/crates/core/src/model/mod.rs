//! The listener network: inception blocks with squeeze-and-excitation,
//! a dense head emitting `(μ, log a)`, weight transfer from the
//! full-reference variant, and checkpoint persistence.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::CHECKPOINT_VERSION;
pub use config::{input_facing, param_count, param_specs, InceptionSpec, ModelConfig, Precision, Stage, Variant};
pub use network::{aggregate_segments, build_model, predict_file, transfer_first_block, InitMode, Model, NormStats};

use thiserror::Error;

use crate::dsp::DspError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("mode {0} requires a donor checkpoint (--donor)")]
    MissingDonor(InitMode),
    #[error("incompatible donor: {0}")]
    IncompatibleDonor(String),
    #[error("model has no normalization statistics")]
    MissingNorm,
    #[error("no segments to score")]
    NoSegments,
    #[error("audio too short: {frames} frames, need a full segment of {need}")]
    TooShort { frames: usize, need: usize },
    #[error("{0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
