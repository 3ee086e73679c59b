use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ContactSchedule, NodeId, TopologyError};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErdosRenyiConfig {
    pub node_count: usize,
    pub edge_prob: f64,
    pub slots: usize,
    pub seed: u64,
}

/// Fixed population of nodes `0..node_count`; each unordered pair is linked
/// independently with probability `edge_prob`, redrawn every slot.
pub fn erdos_renyi_schedule(cfg: &ErdosRenyiConfig) -> Result<ContactSchedule, TopologyError> {
    if !(0.0..=1.0).contains(&cfg.edge_prob) {
        return Err(TopologyError::Config(format!("edge probability {} outside [0, 1]", cfg.edge_prob)));
    }
    let nodes: Vec<NodeId> = (0..cfg.node_count as u64).map(NodeId).collect();
    let mut rng = seed::rng(cfg.seed);
    let mut edges = Vec::with_capacity(cfg.slots);
    for _ in 0..cfg.slots {
        let mut slot = Vec::new();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                if rng.gen_bool(cfg.edge_prob) {
                    slot.push((nodes[i], nodes[j]));
                }
            }
        }
        edges.push(slot);
    }
    ContactSchedule::from_slots(vec![nodes; cfg.slots], edges)
}
