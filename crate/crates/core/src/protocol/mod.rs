//! The per-slot gossip learning state machine.
//!
//! Each slot runs three globally barriered phases over the present nodes in
//! id order: local training and validation, loss advertisement with model
//! requests, and inverse-loss merging. Churn is applied before each slot.

mod engine;
mod stopping;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, PartitionConfig};
use crate::energy::{CostParams, EnergyError};
use crate::nn::{LayerSpec, NnError, OptimizerConfig};
use crate::topology::{NodeId, TopologyError};
use crate::tuner::{TunerError, TunerFeatures, DEFAULT_Z_MAX};

pub use engine::{run_experiment, Experiment, ExperimentResult, ExperimentSetup, NodeState};
pub use stopping::{StopTracker, StoppingRule};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Node model architecture and local optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: Vec<LayerSpec>,
    pub optimizer: OptimizerConfig,
}

/// How local datasets are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPlan {
    pub partition: PartitionConfig,
    /// When true, every node (including those present at slot 0) draws a
    /// uniform size in `[per_node_min, per_node_max]` from the reserve pool
    /// and `global_size` is ignored. Otherwise nodes present at slot 0 share
    /// `global_size` samples and later arrivals draw from the pool.
    pub pooled: bool,
}

/// Knobs of the protocol itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub z_max: u32,
    pub costs: CostParams,
    pub stopping: StoppingRule,
    /// Per-node energy budget; its remainder is a tuner feature.
    pub energy_budget: f64,
    pub compute_power: f64,
    /// Stop as soon as mean accuracy reaches this value.
    pub stop_at_target: Option<f64>,
    /// Test samples used for per-round metrics; `None` uses the whole test set.
    pub metrics_test_limit: Option<usize>,
    pub record_messages: bool,
    pub record_decisions: bool,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            z_max: DEFAULT_Z_MAX,
            costs: CostParams::default(),
            stopping: StoppingRule::default(),
            energy_budget: 100.0,
            compute_power: 1.0,
            stop_at_target: None,
            metrics_test_limit: None,
            record_messages: false,
            record_decisions: false,
        }
    }
}

/// Messages exchanged in one slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotMessages {
    /// `(from, to, loss)`.
    pub loss_ads: Vec<(NodeId, NodeId, f64)>,
    /// `(from, to)`: `from` asks `to` for its model.
    pub requests: Vec<(NodeId, NodeId)>,
    /// `(from, to)`: `from` sends its model to `to`.
    pub responses: Vec<(NodeId, NodeId)>,
}

/// What one node decided and observed in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub slot: usize,
    pub node: NodeId,
    pub features: TunerFeatures,
    pub epochs: u32,
    pub own_loss: f64,
    /// Advertised losses of the neighbors whose models were merged.
    pub merged_losses: Vec<f64>,
    /// Every advertised loss the node received.
    pub advertised_losses: Vec<f64>,
}

/// Metrics after one round, averaged over present nodes on the test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based.
    pub round: usize,
    pub present_nodes: usize,
    pub mean_acc: f64,
    pub mean_loss: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    #[serde(rename = "S")]
    pub training: f64,
    #[serde(rename = "Gamma")]
    pub evaluation: f64,
    #[serde(rename = "C")]
    pub communication: f64,
    pub objective: f64,
}

pub const METRICS_HEADER: [&str; 11] = [
    "round",
    "present_nodes",
    "mean_acc",
    "mean_loss",
    "macro_f1",
    "macro_precision",
    "macro_recall",
    "S",
    "Gamma",
    "C",
    "objective",
];

pub fn write_metrics_csv(rows: &[RoundMetrics], out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| std::io::Error::other(e);
    w.write_record(METRICS_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.present_nodes.to_string(),
            r.mean_acc.to_string(),
            r.mean_loss.to_string(),
            r.macro_f1.to_string(),
            r.macro_precision.to_string(),
            r.macro_recall.to_string(),
            r.training.to_string(),
            r.evaluation.to_string(),
            r.communication.to_string(),
            r.objective.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()
}

/// Writes `slot,kind,from,to,loss` rows; `loss` is empty except for ads.
pub fn write_message_trace(slots: &[SlotMessages], out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| std::io::Error::other(e);
    w.write_record(["slot", "kind", "from", "to", "loss"]).map_err(io)?;
    for (t, m) in slots.iter().enumerate() {
        for (a, b, l) in &m.loss_ads {
            w.write_record([t.to_string(), "loss".into(), a.to_string(), b.to_string(), l.to_string()]).map_err(io)?;
        }
        for (a, b) in &m.requests {
            w.write_record([t.to_string(), "request".into(), a.to_string(), b.to_string(), String::new()])
                .map_err(io)?;
        }
        for (a, b) in &m.responses {
            w.write_record([t.to_string(), "model".into(), a.to_string(), b.to_string(), String::new()]).map_err(io)?;
        }
    }
    w.flush()
}
