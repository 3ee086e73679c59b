use std::collections::BTreeMap;
use std::sync::Arc;

use log::debug;
use rand::Rng;

use super::{
    DataPlan, DecisionRecord, ModelConfig, ProtocolError, ProtocolParams, RoundMetrics, SlotMessages, StopTracker,
};
use crate::dataset::{local_from_indices, partition, LocalDataset, ReservePool, SourceDataset};
use crate::energy::EnergyLedger;
use crate::nn::{dfed_pow_weights, evaluate, init_network, merge_models, train_epochs, DenseNetwork, LossKind, Sample};
use crate::seed;
use crate::topology::{ContactSchedule, NodeId};
use crate::tuner::{FeatureInputs, Policy, TunerDecision, TunerFeatures};

/// Everything a node carries between slots.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub model: DenseNetwork,
    pub local: LocalDataset,
    /// Validation loss from the most recent training phase (or of the
    /// initial model, before the first one).
    pub last_loss: f64,
    pub joined_at: usize,
}

/// Output of a finished run.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rounds: Vec<RoundMetrics>,
    pub ledger: EnergyLedger,
    /// Number of rounds run (1-based index of the last round).
    pub cutoff: usize,
    pub messages: Vec<SlotMessages>,
    pub decisions: Vec<DecisionRecord>,
    /// Final per-node test accuracy, in id order.
    pub final_node_accuracy: Vec<(NodeId, f64)>,
}

impl ExperimentResult {
    pub fn final_metrics(&self) -> Option<&RoundMetrics> {
        self.rounds.last()
    }
}

/// Inputs of one run.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub schedule: ContactSchedule,
    pub source: Arc<SourceDataset>,
    pub data: DataPlan,
    pub model: ModelConfig,
    pub policy: Policy,
    pub params: ProtocolParams,
    pub master_seed: u64,
    /// Charged to the infra counter for every joining node when `policy`
    /// uses a tuning model.
    pub mtune_bytes: u64,
}

/// A running experiment. Drive it with [`Experiment::step`] or [`Experiment::run`].
pub struct Experiment {
    schedule: ContactSchedule,
    source: Arc<SourceDataset>,
    data: DataPlan,
    model: ModelConfig,
    policy: Policy,
    params: ProtocolParams,
    master_seed: u64,
    mtune_bytes: u64,
    w0: DenseNetwork,
    states: BTreeMap<NodeId, NodeState>,
    pool: ReservePool,
    test: Vec<Sample>,
    ledger: EnergyLedger,
    messages: Vec<SlotMessages>,
    decisions: Vec<DecisionRecord>,
    rounds: Vec<RoundMetrics>,
    tracker: StopTracker,
}

impl Experiment {
    pub fn new(setup: ExperimentSetup) -> Result<Self, ProtocolError> {
        let ExperimentSetup { schedule, source, data, model, policy, params, master_seed, mtune_bytes } = setup;
        if !params.stopping.is_valid() {
            return Err(ProtocolError::Config(format!("invalid stopping rule {:?}", params.stopping)));
        }
        let w0 = init_network(&model.layers, seed::derive(master_seed, "w0"))?;
        if w0.input_dim() != source.dim() || w0.output_dim() != source.num_classes {
            return Err(ProtocolError::Config(format!(
                "model maps {} -> {} but the data has {} features and {} classes",
                w0.input_dim(),
                w0.output_dim(),
                source.dim(),
                source.num_classes
            )));
        }
        model.optimizer.validate()?;

        let initial: Vec<NodeId> = schedule.present_nodes(0).to_vec();
        let part = if data.pooled {
            partition(&source, &[], &data.partition)?
        } else {
            partition(&source, &initial, &data.partition)?
        };
        let mut test = part.test;
        if let Some(limit) = params.metrics_test_limit {
            test.truncate(limit);
        }
        if test.is_empty() {
            return Err(ProtocolError::Config("empty test set".into()));
        }
        let ledger = EnergyLedger::new(params.costs)?;
        let mut exp = Self {
            tracker: params.stopping.tracker(),
            schedule,
            source,
            data,
            model,
            policy,
            params,
            master_seed,
            mtune_bytes,
            w0,
            states: BTreeMap::new(),
            pool: ReservePool::new(part.reserve),
            test,
            ledger,
            messages: Vec::new(),
            decisions: Vec::new(),
            rounds: Vec::new(),
        };
        for local in part.locals {
            exp.admit(local, 0)?;
        }
        Ok(exp)
    }

    pub fn states(&self) -> &BTreeMap<NodeId, NodeState> {
        &self.states
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn initial_model(&self) -> &DenseNetwork {
        &self.w0
    }

    pub fn test_set(&self) -> &[Sample] {
        &self.test
    }

    fn admit(&mut self, local: LocalDataset, t: usize) -> Result<(), ProtocolError> {
        let model = self.w0.clone();
        let last_loss = if local.validation.is_empty() {
            (self.source.num_classes as f64).ln()
        } else {
            evaluate(&model, &local.validation, LossKind::CrossEntropy)?.mean_loss
        };
        if matches!(self.policy, Policy::Mtune(_)) {
            self.ledger.record_infra_bytes(self.mtune_bytes);
        }
        self.states.insert(local.node, NodeState { id: local.node, model, local, last_loss, joined_at: t });
        Ok(())
    }

    /// Applies arrivals and departures for slot `t`. Returns `(arrived, departed)`.
    pub fn handle_churn(&mut self, t: usize) -> Result<(Vec<NodeId>, Vec<NodeId>), ProtocolError> {
        let present = self.schedule.present_nodes(t).to_vec();
        let departed: Vec<NodeId> = self.states.keys().copied().filter(|v| present.binary_search(v).is_err()).collect();
        for v in &departed {
            let state = self.states.remove(v).expect("departing node has state");
            self.pool.give_back(state.local.indices());
        }
        let arrived: Vec<NodeId> = present.iter().copied().filter(|v| !self.states.contains_key(v)).collect();
        let p = self.data.partition;
        for &v in &arrived {
            let mut rng = seed::rng(seed::derive_keyed(self.master_seed, "arrival-size", &[v.0]));
            let size = rng.gen_range(p.per_node_min..=p.per_node_max.max(p.per_node_min));
            let idx = self.pool.draw(size)?;
            let local = local_from_indices(&self.source, v, &idx, p.validation_fraction);
            self.admit(local, t)?;
        }
        if !arrived.is_empty() || !departed.is_empty() {
            debug!("slot {t}: {} arrived, {} departed", arrived.len(), departed.len());
        }
        Ok((arrived, departed))
    }

    fn features(&self, state: &NodeState, neighbors: &[NodeId], t: usize) -> TunerFeatures {
        let losses: Vec<f64> = neighbors.iter().filter_map(|u| self.states.get(u)).map(|s| s.last_loss).collect();
        let totals = self.ledger.node_totals(state.id);
        let spent = totals.objective(self.params.costs.beta);
        TunerFeatures::build(&FeatureInputs {
            train_samples: state.local.train.len(),
            validation_samples: state.local.validation.len(),
            own_loss: state.last_loss,
            neighbor_losses: &losses,
            cumulative_cost: spent,
            remaining_budget: self.params.energy_budget - spent,
            compute_power: self.params.compute_power,
            slot: t,
            max_rounds: self.params.stopping.max_rounds,
        })
    }

    /// Runs the three phases of slot `t` over the current states.
    pub fn run_slot(&mut self, t: usize) -> Result<SlotMessages, ProtocolError> {
        let present: Vec<NodeId> = self.states.keys().copied().collect();

        // Training phase.
        let mut plans: Vec<(NodeId, TunerDecision, TunerFeatures)> = Vec::with_capacity(present.len());
        for &v in &present {
            let neighbors = self.schedule.neighbors(v, t);
            let features = self.features(&self.states[&v], neighbors, t);
            let mut rng = seed::rng(seed::derive_keyed(self.master_seed, "tuner", &[t as u64, v.0]));
            let mut decision = self.policy.decide(&features, neighbors, self.params.z_max, &mut rng);
            decision.epochs = decision.epochs.min(self.params.z_max);
            plans.push((v, decision, features));
        }
        for (v, decision, _) in &plans {
            let train_seed = seed::derive_keyed(self.master_seed, "train", &[t as u64, v.0]);
            let state = self.states.get_mut(v).expect("present node");
            if decision.epochs > 0 && !state.local.train.is_empty() {
                state.model = train_epochs(
                    &state.model,
                    &state.local.train,
                    decision.epochs as usize,
                    &self.model.optimizer,
                    LossKind::CrossEntropy,
                    train_seed,
                )?;
            }
            if !state.local.validation.is_empty() {
                state.last_loss = evaluate(&state.model, &state.local.validation, LossKind::CrossEntropy)?.mean_loss;
            }
            let (d, s) = (state.local.train.len(), state.local.validation.len());
            self.ledger.record_training(*v, t, decision.epochs, d)?;
            self.ledger.record_evaluation(*v, t, s)?;
        }

        // Communication phase.
        let mut msgs = SlotMessages::default();
        let mut selected: Vec<(NodeId, Vec<(NodeId, f64)>)> = Vec::with_capacity(plans.len());
        for (v, decision, features) in &plans {
            let neighbors = self.schedule.neighbors(*v, t);
            for &u in neighbors {
                msgs.loss_ads.push((*v, u, self.states[v].last_loss));
            }
            let ads: Vec<(NodeId, f64)> = neighbors.iter().map(|&u| (u, self.states[&u].last_loss)).collect();
            let chosen = decision.select(&ads);
            for &u in &chosen {
                msgs.requests.push((*v, u));
                msgs.responses.push((u, *v));
            }
            self.ledger.record_communication(*v, t, neighbors.len(), chosen.len())?;
            let merged: Vec<(NodeId, f64)> = ads.iter().copied().filter(|(u, _)| chosen.contains(u)).collect();
            if self.params.record_decisions {
                self.decisions.push(DecisionRecord {
                    slot: t,
                    node: *v,
                    features: *features,
                    epochs: decision.epochs,
                    own_loss: self.states[v].last_loss,
                    merged_losses: merged.iter().map(|p| p.1).collect(),
                    advertised_losses: ads.iter().map(|p| p.1).collect(),
                });
            }
            selected.push((*v, merged));
        }

        // Merging phase, from the post-training snapshot.
        let mut merged_models = Vec::with_capacity(selected.len());
        for (v, received) in &selected {
            if received.is_empty() {
                continue;
            }
            let own = &self.states[v];
            let mut models = vec![&own.model];
            let mut losses = vec![own.last_loss];
            for (u, l) in received {
                models.push(&self.states[u].model);
                losses.push(*l);
            }
            merged_models.push((*v, merge_models(&models, &dfed_pow_weights(&losses))?));
        }
        for (v, m) in merged_models {
            self.states.get_mut(&v).expect("present node").model = m;
        }
        Ok(msgs)
    }

    /// Mean test metrics over present nodes after round `round` (1-based).
    pub fn metrics(&self, round: usize) -> Result<RoundMetrics, ProtocolError> {
        let n = self.states.len();
        let mut sums = [0.0; 5];
        for state in self.states.values() {
            let m = evaluate(&state.model, &self.test, LossKind::CrossEntropy)?;
            for (s, x) in sums.iter_mut().zip([m.accuracy, m.mean_loss, m.macro_f1, m.macro_precision, m.macro_recall])
            {
                *s += x;
            }
        }
        let avg = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
        let totals = self.ledger.totals();
        Ok(RoundMetrics {
            round,
            present_nodes: n,
            mean_acc: avg(sums[0]),
            mean_loss: avg(sums[1]),
            macro_f1: avg(sums[2]),
            macro_precision: avg(sums[3]),
            macro_recall: avg(sums[4]),
            training: totals.training,
            evaluation: totals.evaluation,
            communication: totals.communication,
            objective: self.ledger.objective(),
        })
    }

    /// Runs slot `t` (churn, phases, metrics). Returns true when the run is over.
    pub fn step(&mut self, t: usize) -> Result<bool, ProtocolError> {
        self.handle_churn(t)?;
        let msgs = self.run_slot(t)?;
        if self.params.record_messages {
            self.messages.push(msgs);
        }
        let m = self.metrics(t + 1)?;
        self.rounds.push(m);
        let stop = self.tracker.observe(m.mean_acc);
        let hit_target = self.params.stop_at_target.is_some_and(|r| m.mean_acc >= r);
        Ok(stop || hit_target || t + 1 >= self.schedule.slot_count())
    }

    pub fn run(mut self) -> Result<ExperimentResult, ProtocolError> {
        if self.schedule.slot_count() == 0 {
            return Err(ProtocolError::Config("schedule has no slots".into()));
        }
        let mut t = 0;
        while !self.step(t)? {
            t += 1;
        }
        let final_node_accuracy = self
            .states
            .values()
            .map(|s| Ok((s.id, evaluate(&s.model, &self.test, LossKind::CrossEntropy)?.accuracy)))
            .collect::<Result<_, ProtocolError>>()?;
        Ok(ExperimentResult {
            cutoff: self.rounds.len(),
            rounds: self.rounds,
            ledger: self.ledger,
            messages: self.messages,
            decisions: self.decisions,
            final_node_accuracy,
        })
    }
}

/// Builds and runs an experiment to completion.
pub fn run_experiment(setup: ExperimentSetup) -> Result<ExperimentResult, ProtocolError> {
    Experiment::new(setup)?.run()
}
