//! Per-slot contact graphs and node presence.
//!
//! Connectivity is fixed within a slot and evaluated at slot boundaries.
//! Three providers build a [`ContactSchedule`]: dynamic Erdős–Rényi graphs,
//! position traces with a contact radius, and a synthetic vehicular churn
//! generator.

mod churn;
mod contacts;
mod erdos_renyi;
mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use churn::{arrival_departure_profile, synthetic_churn_schedule, ChurnConfig, ChurnProfile};
pub use contacts::{read_contact_list, write_contact_list};
pub use erdos_renyi::{erdos_renyi_schedule, ErdosRenyiConfig};
pub use trace::{read_trace, trace_schedule, TraceRecord};

/// Globally unique node identifier. Never reused after a node departs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: timestamp for node {node} is not increasing")]
    NonMonotone { node: NodeId, line: usize },
    #[error("slot {slot}: {message}")]
    InvalidSlot { slot: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
struct SlotGraph {
    present: Vec<NodeId>,
    adjacency: BTreeMap<NodeId, Vec<NodeId>>,
}

/// Neighbor sets `H(v, t)` and presence for every slot.
///
/// Guarantees: neighbor relations are symmetric, irreflexive and only link
/// nodes present in that slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactSchedule {
    slots: Vec<SlotGraph>,
}

impl ContactSchedule {
    /// Builds a schedule from per-slot presence lists and undirected edge lists.
    ///
    /// Edges are symmetrized; duplicates collapse.
    pub fn from_slots(presence: Vec<Vec<NodeId>>, edges: Vec<Vec<(NodeId, NodeId)>>) -> Result<Self, TopologyError> {
        if presence.len() != edges.len() {
            return Err(TopologyError::Config(format!(
                "{} presence slots but {} edge slots",
                presence.len(),
                edges.len()
            )));
        }
        let mut slots = Vec::with_capacity(presence.len());
        for (t, (present, slot_edges)) in presence.into_iter().zip(edges).enumerate() {
            let present: BTreeSet<NodeId> = present.into_iter().collect();
            let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = present.iter().map(|&v| (v, BTreeSet::new())).collect();
            for (a, b) in slot_edges {
                if a == b {
                    return Err(TopologyError::InvalidSlot { slot: t, message: format!("self-loop on node {a}") });
                }
                if !present.contains(&a) || !present.contains(&b) {
                    return Err(TopologyError::InvalidSlot {
                        slot: t,
                        message: format!("edge {a}-{b} touches an absent node"),
                    });
                }
                adj.get_mut(&a).unwrap().insert(b);
                adj.get_mut(&b).unwrap().insert(a);
            }
            slots.push(SlotGraph {
                present: present.into_iter().collect(),
                adjacency: adj.into_iter().map(|(v, n)| (v, n.into_iter().collect())).collect(),
            });
        }
        Ok(Self { slots })
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// Nodes present in slot `t`, ascending. Empty past the last slot.
    pub fn present_nodes(&self, t: usize) -> &[NodeId] {
        self.slots.get(t).map_or(&[], |s| &s.present)
    }

    pub fn is_present(&self, v: NodeId, t: usize) -> bool {
        self.present_nodes(t).binary_search(&v).is_ok()
    }

    /// `H(v, t)`, ascending. Empty when `v` is absent.
    pub fn neighbors(&self, v: NodeId, t: usize) -> &[NodeId] {
        self.slots.get(t).and_then(|s| s.adjacency.get(&v)).map_or(&[], Vec::as_slice)
    }

    pub fn degree(&self, v: NodeId, t: usize) -> usize {
        self.neighbors(v, t).len()
    }

    /// Nodes present at `t` but not at `t - 1` (all present nodes at `t = 0`).
    pub fn arrivals(&self, t: usize) -> Vec<NodeId> {
        self.present_nodes(t).iter().copied().filter(|&v| t == 0 || !self.is_present(v, t - 1)).collect()
    }

    /// Nodes present at `t - 1` but not at `t`.
    pub fn departures(&self, t: usize) -> Vec<NodeId> {
        if t == 0 {
            return Vec::new();
        }
        self.present_nodes(t - 1).iter().copied().filter(|&v| !self.is_present(v, t)).collect()
    }

    /// Every node that is present in at least one slot.
    pub fn all_nodes(&self) -> Vec<NodeId> {
        let set: BTreeSet<NodeId> = self.slots.iter().flat_map(|s| s.present.iter().copied()).collect();
        set.into_iter().collect()
    }

    /// Undirected edges of slot `t` as `(a, b)` with `a < b`.
    pub fn edges(&self, t: usize) -> Vec<(NodeId, NodeId)> {
        let Some(slot) = self.slots.get(t) else { return Vec::new() };
        slot.adjacency.iter().flat_map(|(&a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| (a, b))).collect()
    }

    /// Mean of `h(v, t)` over all present `(v, t)`; zero for an empty schedule.
    pub fn mean_degree(&self) -> f64 {
        let (sum, count) = self.slots.iter().fold((0usize, 0usize), |(s, c), slot| {
            (s + slot.adjacency.values().map(Vec::len).sum::<usize>(), c + slot.present.len())
        });
        if count == 0 {
            0.0
        } else {
            sum as f64 / count as f64
        }
    }

    /// Mean number of present nodes per slot.
    pub fn mean_population(&self) -> f64 {
        if self.slots.is_empty() {
            return 0.0;
        }
        self.slots.iter().map(|s| s.present.len()).sum::<usize>() as f64 / self.slots.len() as f64
    }
}
