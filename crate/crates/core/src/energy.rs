//! Per-node, per-slot energy and communication accounting.
//!
//! Every record appends one event to the log and adds its closed-form cost to
//! the running totals, so the totals can be audited by replaying the log.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NodeId;

/// Cost constants. All values are nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Training compute energy per sample per epoch.
    pub e_g: f64,
    /// Training memory energy per sample per epoch.
    pub e_s: f64,
    /// Evaluation compute energy per sample.
    pub e_e: f64,
    /// Evaluation memory energy per sample.
    pub e_es: f64,
    /// Device-to-device cost per byte.
    pub c_d2d: f64,
    /// Device-to-server cost per byte.
    pub c_infra: f64,
    pub loss_msg_bytes: u64,
    pub request_msg_bytes: u64,
    pub model_msg_bytes: u64,
    pub beta: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        let c_d2d = 1e-9;
        Self {
            e_g: 1e-3,
            e_s: 5e-4,
            e_e: 2e-4,
            e_es: 1e-4,
            c_d2d,
            c_infra: 4.0 * c_d2d,
            loss_msg_bytes: 64,
            request_msg_bytes: 64,
            model_msg_bytes: 320_000,
            beta: 1.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), EnergyError> {
        let fields = [
            ("e_g", self.e_g),
            ("e_s", self.e_s),
            ("e_e", self.e_e),
            ("e_es", self.e_es),
            ("c_d2d", self.c_d2d),
            ("c_infra", self.c_infra),
            ("beta", self.beta),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EnergyError::InvalidParam(name, v));
            }
        }
        Ok(())
    }

    pub fn training_cost(&self, epochs: u32, samples: usize) -> f64 {
        epochs as f64 * samples as f64 * (self.e_g + self.e_s)
    }

    pub fn evaluation_cost(&self, samples: usize) -> f64 {
        samples as f64 * (self.e_e + self.e_es)
    }

    /// Cost of `h` loss advertisements plus `k` request/model exchanges.
    pub fn communication_cost(&self, h: usize, k: usize) -> f64 {
        let bytes =
            h as f64 * self.loss_msg_bytes as f64 + k as f64 * (self.model_msg_bytes + self.request_msg_bytes) as f64;
        self.c_d2d * bytes
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("duplicate {kind} record for node {node} in slot {slot}")]
    Duplicate { node: NodeId, slot: usize, kind: &'static str },
    #[error("node {node} slot {slot}: requested {k} models from {h} neighbors")]
    TooManyRequests { node: NodeId, slot: usize, h: usize, k: usize },
    #[error("cost parameter {0} must be nonnegative and finite, got {1}")]
    InvalidParam(&'static str, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Train { z: u32, d: usize },
    Eval { s: usize },
    Comm { h: usize, k: usize },
}

impl EventKind {
    fn name(&self) -> &'static str {
        match self {
            EventKind::Train { .. } => "train",
            EventKind::Eval { .. } => "eval",
            EventKind::Comm { .. } => "comm",
        }
    }

    /// Closed-form cost of this event.
    pub fn cost(&self, params: &CostParams) -> f64 {
        match *self {
            EventKind::Train { z, d } => params.training_cost(z, d),
            EventKind::Eval { s } => params.evaluation_cost(s),
            EventKind::Comm { h, k } => params.communication_cost(h, k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEvent {
    pub slot: usize,
    pub node: NodeId,
    pub kind: EventKind,
    pub delta: f64,
}

/// Running totals `S` (training), `Gamma` (evaluation) and `C` (communication).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub training: f64,
    pub evaluation: f64,
    pub communication: f64,
}

impl Totals {
    /// `C + beta (S + Gamma)`.
    pub fn objective(&self, beta: f64) -> f64 {
        self.communication + beta * (self.training + self.evaluation)
    }

    fn add(&mut self, kind: &EventKind, delta: f64) {
        match kind {
            EventKind::Train { .. } => self.training += delta,
            EventKind::Eval { .. } => self.evaluation += delta,
            EventKind::Comm { .. } => self.communication += delta,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnergyLedger {
    params: CostParams,
    events: Vec<EnergyEvent>,
    seen: HashSet<(NodeId, usize, &'static str)>,
    totals: Totals,
    per_node: BTreeMap<NodeId, Totals>,
    infra_bytes: u64,
}

impl EnergyLedger {
    pub fn new(params: CostParams) -> Result<Self, EnergyError> {
        params.validate()?;
        Ok(Self {
            params,
            events: Vec::new(),
            seen: HashSet::new(),
            totals: Totals::default(),
            per_node: BTreeMap::new(),
            infra_bytes: 0,
        })
    }

    pub fn params(&self) -> &CostParams {
        &self.params
    }

    pub fn record_training(&mut self, v: NodeId, t: usize, z: u32, d: usize) -> Result<f64, EnergyError> {
        self.record(v, t, EventKind::Train { z, d })
    }

    pub fn record_evaluation(&mut self, v: NodeId, t: usize, s: usize) -> Result<f64, EnergyError> {
        self.record(v, t, EventKind::Eval { s })
    }

    /// Communication attributed to `v`: `h` advertisements sent and `k` models
    /// requested (each request plus its model response).
    pub fn record_communication(&mut self, v: NodeId, t: usize, h: usize, k: usize) -> Result<f64, EnergyError> {
        if k > h {
            return Err(EnergyError::TooManyRequests { node: v, slot: t, h, k });
        }
        self.record(v, t, EventKind::Comm { h, k })
    }

    fn record(&mut self, node: NodeId, slot: usize, kind: EventKind) -> Result<f64, EnergyError> {
        if !self.seen.insert((node, slot, kind.name())) {
            return Err(EnergyError::Duplicate { node, slot, kind: kind.name() });
        }
        let delta = kind.cost(&self.params);
        self.totals.add(&kind, delta);
        self.per_node.entry(node).or_default().add(&kind, delta);
        self.events.push(EnergyEvent { slot, node, kind, delta });
        Ok(delta)
    }

    /// Device-to-server bytes. Tracked apart from the objective.
    pub fn record_infra_bytes(&mut self, bytes: u64) {
        self.infra_bytes += bytes;
    }

    pub fn infra_bytes(&self) -> u64 {
        self.infra_bytes
    }

    pub fn infra_cost(&self) -> f64 {
        self.infra_bytes as f64 * self.params.c_infra
    }

    pub fn totals(&self) -> Totals {
        self.totals
    }

    pub fn node_totals(&self, v: NodeId) -> Totals {
        self.per_node.get(&v).copied().unwrap_or_default()
    }

    pub fn objective(&self) -> f64 {
        self.totals.objective(self.params.beta)
    }

    pub fn events(&self) -> &[EnergyEvent] {
        &self.events
    }

    /// Writes the event log as `slot,node,event,z,d,s,h,k,delta`; fields that
    /// do not apply to an event are left empty.
    pub fn write_event_log(&self, out: impl Write) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| std::io::Error::other(e);
        w.write_record(["slot", "node", "event", "z", "d", "s", "h", "k", "delta"]).map_err(io)?;
        for e in &self.events {
            let mut row = vec![e.slot.to_string(), e.node.to_string(), e.kind.name().to_string()];
            let blank = String::new;
            let (z, d, s, h, k) = match e.kind {
                EventKind::Train { z, d } => (z.to_string(), d.to_string(), blank(), blank(), blank()),
                EventKind::Eval { s } => (blank(), blank(), s.to_string(), blank(), blank()),
                EventKind::Comm { h, k } => (blank(), blank(), blank(), h.to_string(), k.to_string()),
            };
            row.extend([z, d, s, h, k, format!("{:e}", e.delta)]);
            w.write_record(&row).map_err(io)?;
        }
        w.flush()
    }
}

/// Recomputes totals from raw events.
pub fn replay(events: &[EnergyEvent], params: &CostParams) -> Totals {
    let mut totals = Totals::default();
    for e in events {
        totals.add(&e.kind, e.kind.cost(params));
    }
    totals
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger() -> EnergyLedger {
        EnergyLedger::new(CostParams::default()).unwrap()
    }

    #[test]
    fn closed_form_deltas() {
        let mut l = ledger();
        assert!((l.record_training(NodeId(0), 0, 2, 100).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(l.record_training(NodeId(1), 0, 0, 100).unwrap(), 0.0);
        assert!((l.record_evaluation(NodeId(0), 0, 40).unwrap() - 0.012).abs() < 1e-12);
        assert_eq!(l.record_evaluation(NodeId(1), 0, 0).unwrap(), 0.0);
        let c = l.record_communication(NodeId(0), 0, 3, 1).unwrap();
        assert!((c - 3.20256e-4).abs() < 1e-15);
        assert_eq!(l.record_communication(NodeId(1), 0, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_duplicates_and_excess_requests() {
        let mut l = ledger();
        l.record_training(NodeId(0), 3, 1, 10).unwrap();
        assert!(matches!(l.record_training(NodeId(0), 3, 1, 10), Err(EnergyError::Duplicate { .. })));
        l.record_evaluation(NodeId(0), 3, 10).unwrap();
        assert!(matches!(
            l.record_communication(NodeId(0), 3, 1, 2),
            Err(EnergyError::TooManyRequests { h: 1, k: 2, .. })
        ));
        assert_eq!(l.events().len(), 2);
    }

    #[test]
    fn objective_forms() {
        let empty = ledger();
        assert_eq!(empty.objective(), 0.0);
        let t = Totals { training: 2.0, evaluation: 0.5, communication: 1.0 };
        assert_eq!(t.objective(1.0), 3.5);
        assert_eq!(t.objective(0.0), 1.0);
    }

    #[test]
    fn infra_is_outside_objective() {
        let mut l = ledger();
        l.record_infra_bytes(1000);
        assert_eq!(l.objective(), 0.0);
        assert!((l.infra_cost() - 4e-6).abs() < 1e-18);
    }

    #[test]
    fn event_log_has_one_row_per_event() {
        let mut l = ledger();
        l.record_training(NodeId(2), 0, 1, 5).unwrap();
        l.record_communication(NodeId(2), 0, 2, 1).unwrap();
        let mut buf = Vec::new();
        l.write_event_log(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "slot,node,event,z,d,s,h,k,delta");
        assert!(lines[1].starts_with("0,2,train,1,5,,,,"));
        assert!(lines[2].starts_with("0,2,comm,,,,2,1,"));
    }

    #[test]
    fn rejects_negative_params() {
        let p = CostParams { c_d2d: -1.0, ..CostParams::default() };
        assert!(EnergyLedger::new(p).is_err());
    }
}
