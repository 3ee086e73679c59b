use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dataset::{load_source, PartitionConfig, SourceDataset};
use crate::energy::CostParams;
use crate::nn::{Activation, LayerSpec, OptimizerConfig};
use crate::orchestrator::import_mtune;
use crate::protocol::{DataPlan, ExperimentSetup, ModelConfig, ProtocolParams, StoppingRule};
use crate::seed;
use crate::topology::{
    erdos_renyi_schedule, read_contact_list, synthetic_churn_schedule, trace_schedule, ChurnConfig, ContactSchedule,
    ErdosRenyiConfig,
};
use crate::tuner::{Policy, PolicySpec, DEFAULT_Z_MAX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySpec {
    ErdosRenyi {
        node_count: usize,
        edge_prob: f64,
        slots: usize,
    },
    /// The churn seed is replaced by one derived from the scenario seed.
    Churn(ChurnConfig),
    Trace {
        path: PathBuf,
        contact_radius: f64,
        slot_length: f64,
    },
    ContactList {
        path: PathBuf,
        slots: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Any source accepted by [`load_source`].
    pub source: String,
    /// Average-pooling factor for image sources; 1 keeps full resolution.
    #[serde(default = "one")]
    pub pool: usize,
    /// Keep a seeded subset of this many samples.
    #[serde(default)]
    pub subsample: Option<usize>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Hidden ReLU widths; the output layer is a softmax over the classes.
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerConfig,
}

/// A fully specified experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub topology: TopologySpec,
    pub dataset: DatasetSpec,
    pub partition: PartitionConfig,
    /// Draw every local dataset from the reserve pool (see [`DataPlan`]).
    #[serde(default)]
    pub pooled_data: bool,
    pub model: ModelSpec,
    pub costs: CostParams,
    pub stopping: StoppingRule,
    pub z_max: u32,
    pub energy_budget: f64,
    pub policy: PolicySpec,
    /// Target mean accuracy `r0`.
    pub target_accuracy: f64,
    pub seed: u64,
    #[serde(default)]
    pub metrics_test_limit: Option<usize>,
    /// Local epochs per FedAvg client per round.
    #[serde(default = "one_u32")]
    pub fedavg_local_epochs: u32,
}

fn one_u32() -> u32 {
    1
}

pub const PRESETS: [&str; 11] = [
    "mnist-er-3-p01",
    "mnist-er-3-p07",
    "mnist-er-3-p1",
    "mnist-er-6-p01",
    "mnist-er-6-p07",
    "mnist-er-6-p1",
    "mnist-er-12-p01",
    "mnist-er-12-p07",
    "mnist-er-12-p1",
    "churn-luxembourg",
    "synthetic-smoke",
];

/// Costs used by the presets. A 320 KB model transfer costs about as much
/// as two epochs over a 100-sample local dataset.
pub fn preset_costs() -> CostParams {
    let c_d2d = 1e-6;
    CostParams { c_d2d, c_infra: 4.0 * c_d2d, ..CostParams::default() }
}

fn mnist_model() -> ModelSpec {
    ModelSpec { hidden: vec![32], optimizer: OptimizerConfig::sgd(0.001, 0.9, 16) }
}

fn mnist_dataset(subsample: Option<usize>) -> DatasetSpec {
    DatasetSpec { source: "mnist".into(), pool: 2, subsample }
}

/// Named scenario. Errors list the available names.
pub fn preset(name: &str) -> Result<ScenarioConfig, HarnessError> {
    let base = |topology, dataset, partition| ScenarioConfig {
        name: name.to_string(),
        topology,
        dataset,
        partition,
        pooled_data: false,
        model: mnist_model(),
        costs: preset_costs(),
        stopping: StoppingRule::default(),
        z_max: DEFAULT_Z_MAX,
        energy_budget: 1000.0,
        policy: PolicySpec::Dp,
        target_accuracy: 0.8,
        seed: 1,
        metrics_test_limit: None,
        fedavg_local_epochs: 1,
    };
    if let Some(rest) = name.strip_prefix("mnist-er-") {
        let (n, p) = rest.split_once("-p").ok_or_else(|| unknown(name))?;
        let node_count: usize = n.parse().map_err(|_| unknown(name))?;
        let edge_prob = match p {
            "01" => 0.1,
            "07" => 0.7,
            "1" => 1.0,
            _ => return Err(unknown(name)),
        };
        if ![3, 6, 12].contains(&node_count) {
            return Err(unknown(name));
        }
        let stopping = StoppingRule::default();
        return Ok(base(
            TopologySpec::ErdosRenyi { node_count, edge_prob, slots: stopping.max_rounds },
            mnist_dataset(Some(3500)),
            PartitionConfig::default(),
        ));
    }
    match name {
        "churn-luxembourg" => {
            let churn = ChurnConfig::luxembourg(0);
            let slots = (churn.duration * 60.0 / churn.slot_length).round() as usize;
            let partition = PartitionConfig { per_node_min: 50, per_node_max: 200, ..PartitionConfig::default() };
            Ok(ScenarioConfig {
                pooled_data: true,
                metrics_test_limit: Some(500),
                // run the whole observation window
                stopping: StoppingRule { max_rounds: slots, patience: slots, min_improvement: 0.005 },
                ..base(TopologySpec::Churn(churn), mnist_dataset(None), partition)
            })
        }
        "synthetic-smoke" => Ok(ScenarioConfig {
            model: ModelSpec { hidden: vec![8], optimizer: OptimizerConfig::sgd(0.05, 0.9, 8) },
            stopping: StoppingRule { max_rounds: 40, ..StoppingRule::default() },
            target_accuracy: 0.9,
            ..base(
                TopologySpec::ErdosRenyi { node_count: 4, edge_prob: 0.7, slots: 40 },
                DatasetSpec {
                    source: "synthetic:blobs?n=600&classes=3&dim=6&spread=0.2&seed=5".into(),
                    pool: 1,
                    subsample: None,
                },
                PartitionConfig { global_size: 200, per_node_min: 20, per_node_max: 100, ..PartitionConfig::default() },
            )
        }),
        _ => Err(unknown(name)),
    }
}

fn unknown(name: &str) -> HarnessError {
    HarnessError::Config(format!("unknown preset {name:?}; available: {}", PRESETS.join(", ")))
}

impl ScenarioConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(format!("{}: {m}", self.name)));
        if !(0.0..=1.0).contains(&self.target_accuracy) {
            return bad(format!("target accuracy {} outside [0, 1]", self.target_accuracy));
        }
        if !self.stopping.is_valid() {
            return bad("stopping rule fields must be positive".into());
        }
        if self.model.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if let TopologySpec::ErdosRenyi { node_count, edge_prob, slots } = self.topology {
            if node_count == 0 || slots == 0 || !(0.0..=1.0).contains(&edge_prob) {
                return bad("Erdos-Renyi topology needs nodes, slots and p in [0, 1]".into());
            }
        }
        if self.dataset.pool == 0 {
            return bad("pool factor must be at least 1".into());
        }
        self.costs.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.model.optimizer.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// The source before per-seed subsampling.
    pub fn load_base_source(&self) -> Result<SourceDataset, HarnessError> {
        let src = load_source(&self.dataset.source)?;
        Ok(if self.dataset.pool > 1 { src.pooled(self.dataset.pool)? } else { src })
    }

    pub fn source_for_seed(&self, base: &SourceDataset, seed: u64) -> SourceDataset {
        match self.dataset.subsample {
            Some(n) => base.clone().subsample(n, seed::derive(seed, "subsample")),
            None => base.clone(),
        }
    }

    pub fn schedule(&self, seed: u64) -> Result<ContactSchedule, HarnessError> {
        let topo_seed = seed::derive(seed, "topology");
        Ok(match &self.topology {
            TopologySpec::ErdosRenyi { node_count, edge_prob, slots } => erdos_renyi_schedule(&ErdosRenyiConfig {
                node_count: *node_count,
                edge_prob: *edge_prob,
                slots: *slots,
                seed: topo_seed,
            })?,
            TopologySpec::Churn(c) => synthetic_churn_schedule(&ChurnConfig { seed: topo_seed, ..*c })?,
            TopologySpec::Trace { path, contact_radius, slot_length } => {
                trace_schedule(path, *contact_radius, *slot_length)?
            }
            TopologySpec::ContactList { path, slots } => {
                let file =
                    std::fs::File::open(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
                read_contact_list(file, *slots)?
            }
        })
    }

    pub fn layers(&self, input_dim: usize, classes: usize) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &h in &self.model.hidden {
            layers.push(LayerSpec::new(prev, h, Activation::Relu));
            prev = h;
        }
        layers.push(LayerSpec::new(prev, classes, Activation::Softmax));
        layers
    }

    pub fn partition_for_seed(&self, seed: u64) -> PartitionConfig {
        PartitionConfig { seed: seed::derive(seed, "partition"), ..self.partition }
    }

    pub fn protocol_params(&self) -> ProtocolParams {
        ProtocolParams {
            z_max: self.z_max,
            costs: self.costs,
            stopping: self.stopping,
            energy_budget: self.energy_budget,
            metrics_test_limit: self.metrics_test_limit,
            ..ProtocolParams::default()
        }
    }

    /// Loads the runnable policy. The second value is the byte size charged
    /// per joining node for tuning-model delivery.
    pub fn resolve_policy(spec: &PolicySpec) -> Result<(Policy, u64), HarnessError> {
        Ok(match spec {
            PolicySpec::Random => (Policy::Random, 0),
            PolicySpec::Dp => (Policy::Dp, 0),
            PolicySpec::Fixed { epochs, k } => (Policy::Fixed { epochs: *epochs, k: *k }, 0),
            PolicySpec::Mtune(path) => {
                let (model, bytes) = import_mtune(path)?;
                (Policy::Mtune(Arc::new(model)), bytes)
            }
        })
    }

    /// Builds the protocol-engine inputs for one seed.
    pub fn setup(
        &self,
        base: &SourceDataset,
        policy: Policy,
        mtune_bytes: u64,
        seed: u64,
    ) -> Result<ExperimentSetup, HarnessError> {
        let source = self.source_for_seed(base, seed);
        let layers = self.layers(source.dim(), source.num_classes);
        Ok(ExperimentSetup {
            schedule: self.schedule(seed)?,
            source: Arc::new(source),
            data: DataPlan { partition: self.partition_for_seed(seed), pooled: self.pooled_data },
            model: ModelConfig { layers, optimizer: self.model.optimizer },
            policy,
            params: self.protocol_params(),
            master_seed: seed::derive(seed, "protocol"),
            mtune_bytes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn er_presets_match_grid() {
        let c = preset("mnist-er-6-p1").unwrap();
        assert_eq!(c.topology, TopologySpec::ErdosRenyi { node_count: 6, edge_prob: 1.0, slots: 600 });
        assert_eq!(c.target_accuracy, 0.8);
        assert_eq!(c.costs.beta, 1.0);
        assert_eq!(c.stopping.max_rounds, 600);
        assert_eq!(c.costs.c_infra, 4.0 * c.costs.c_d2d);
        let sparse = preset("mnist-er-12-p01").unwrap();
        assert!(
            matches!(sparse.topology, TopologySpec::ErdosRenyi { node_count: 12, edge_prob, .. } if edge_prob == 0.1)
        );
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn churn_preset_parameters() {
        let c = preset("churn-luxembourg").unwrap();
        let TopologySpec::Churn(ch) = c.topology else { panic!("not churn") };
        assert_eq!(ch.duration, 40.0);
        assert_eq!(ch.slot_length, 20.0);
        assert_eq!(ch.contact_radius, 150.0);
        assert_eq!(ch.mean_sojourn, 2.9);
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = preset("mnist-er-7-p1").unwrap_err().to_string();
        assert!(err.contains("mnist-er-6-p1") && err.contains("churn-luxembourg"));
    }

    #[test]
    fn config_json_round_trip() {
        let c = preset("churn-luxembourg").unwrap();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
    }
}
