//! Experiment runner: configuration, training runs with metrics and
//! checkpoints, deterministic evaluation, seed sweeps and plot aggregates.

mod config;
mod eval;
mod sweep;
mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::RunConfig;
pub use eval::{rollout, run_eval, write_trajectory, EvalOutcome, EvalReport, TrajectoryStep};
pub use sweep::{
    load_run, partition, plot_data, quantile, quantile_curves, run_sweep, seed_dir, CurveRow,
    Partition, SweepSummary, CURVE_METRICS,
};
pub use train::{
    detect_collapse, ff_entropy_jumps, median, read_metrics, run_train, run_train_with, write_json,
    Collapse, EpisodeRow, FailureRecord, RunSummary, TrainOutcome, CARTPOLE_SUCCESS, FF_JUMP_NATS,
};

use crate::checkpoint::CheckpointError;
use crate::learner::LearnerError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("training diverged in episode {episode}; failure record in {}", dir.display())]
    Diverged {
        dir: PathBuf,
        episode: usize,
        #[source]
        source: LearnerError,
    },
    #[error("checkpoint does not fit the environment: {0}")]
    Mismatch(String),
}

impl HarnessError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
