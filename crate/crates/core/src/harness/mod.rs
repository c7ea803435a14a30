//! Experiment orchestration: run configs, metrics, plots, the verify suite
//! and the command line.

pub mod checks;
pub mod cli;
mod config;
mod metrics;
pub mod plot;
mod run;
pub mod verify;

use std::path::PathBuf;

pub use config::{load_config, parse_config, resolve_out_dir, RlRunConfig, RunConfig, SupRunConfig, OUT_ENV};
pub use metrics::{read_metrics, MetricRecord, MetricsWriter};
pub use run::{load_policy, run_rl, run_sweep_job, save_policy, RlRunSummary, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Plot(String),
    #[error("{0} verify checks failed")]
    Verify(usize),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error(transparent)]
    Rl(#[from] crate::rltrain::RlError),
    #[error(transparent)]
    Sup(#[from] crate::supervised::SupError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::MissingCheckpoint(_) => 3,
            _ => 1,
        }
    }
}
