//! Listening-test manifests, feature datasets, fold schedules and the
//! NLL training loop.

mod data;
mod manifest;
mod trainer;

pub use data::{compute_normalization, split_folds, Dataset, ItemFeatures};
pub use manifest::{DatasetManifest, ListeningRecord, ANCHOR_3K5, ANCHOR_7K, HIDDEN_REFERENCE};
pub use trainer::{train, EpochMetrics, Phase, TrainConfig, TrainObserver, TrainReport, METRICS_HEADER};

use thiserror::Error;

use crate::augment::AugmentError;
use crate::dsp::DspError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(
        "non-finite loss or gradient at fold {fold}, epoch {epoch}, step {step}; weights kept at the last good step"
    )]
    NonFinite { fold: usize, epoch: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;
