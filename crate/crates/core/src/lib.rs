//! Simulator for energy-aware gossip learning over dynamic contact graphs.

pub mod baselines;
pub mod dataset;
pub mod energy;
pub mod harness;
pub mod nn;
pub mod orchestrator;
pub mod protocol;
pub mod seed;
pub mod topology;
pub mod tuner;

pub use harness::{preset, HarnessError, ScenarioConfig, Scheme};
pub use nn::{DenseNetwork, LayerSpec, Sample};
pub use protocol::{run_experiment, ExperimentResult, ExperimentSetup, RoundMetrics};
pub use topology::{ContactSchedule, NodeId};
pub use tuner::{Policy, PolicySpec, TunerDecision, TunerFeatures};
