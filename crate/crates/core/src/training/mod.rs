//! Joint multi-task training, fine-tuning from a joint checkpoint and
//! crop-free evaluation.

mod config;
mod data;
mod eval;
mod trainer;

pub use config::{RunConfig, Schedule, StepMode, TaskSpec, TrainOptions};
pub use data::{crop_events, sample_crop_batch, Batch, Segment, TaskData};
pub use eval::{evaluate_task, predict, score_predictions, MetricReport, SamplePrediction};
pub use trainer::{fine_tune, joint_train, EpochRecord, IterationRecord, TrainObserver, TrainOutcome};

use std::path::PathBuf;

use thiserror::Error;

use crate::audio::AudioError;
use crate::features::FeatureError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::task::Task;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{0} manifest is empty")]
    EmptyManifest(Task),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("predictions: {0}")]
    Predictions(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("non-finite loss at iteration {iteration}{}", .task.map(|t| format!(" ({t})")).unwrap_or_default())]
    NonFiniteLoss {
        iteration: u64,
        task: Option<Task>,
        /// Most recent checkpoint written before the failure.
        last_checkpoint: Option<PathBuf>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
