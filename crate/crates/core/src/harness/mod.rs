//! Scenario configuration, presets, single runs, seed sweeps and summaries.

mod config;
mod report;
mod run;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::orchestrator::OrchestratorError;
use crate::protocol::ProtocolError;
use crate::topology::TopologyError;

pub use config::{preset, preset_costs, DatasetSpec, ModelSpec, ScenarioConfig, TopologySpec, PRESETS};
pub use report::{
    confidence_half_width, read_metrics_csv, summarize, summarize_dir, write_summary_csv, MetricsFile, SummaryRow,
    SUMMARY_METRICS,
};
pub use run::{
    manifest_hash, output_root, run_scheme, run_suite, write_run, RunOutcome, Scheme, SuiteConfig, SuiteReport,
    OUTPUT_DIR_ENV,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// True for errors caused by the inputs rather than by a run.
    pub fn is_config_error(&self) -> bool {
        match self {
            HarnessError::Config(_) | HarnessError::Dataset(_) | HarnessError::Topology(_) => true,
            HarnessError::Orchestrator(e) => {
                !matches!(e, OrchestratorError::Rollout { .. } | OrchestratorError::NonFiniteLoss { .. })
            }
            HarnessError::Protocol(ProtocolError::Config(_)) => true,
            HarnessError::Protocol(_) | HarnessError::Io(_) => false,
        }
    }
}
