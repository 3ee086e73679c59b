//! Comparison schemes that share the node model and data split of a gossip
//! run: a central server, federated averaging and isolated local training.
//!
//! None of these schemes validate locally, so each trains on the union of a
//! node's training and validation samples.

use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::LocalDataset;
use crate::energy::{CostParams, Totals};
use crate::nn::{evaluate, merge_models, train_epochs, DenseNetwork, LossKind, OptimizerConfig, Sample};
use crate::protocol::{Experiment, ExperimentSetup, ProtocolError, RoundMetrics, StoppingRule, METRICS_HEADER};
use crate::seed;
use crate::topology::{ContactSchedule, NodeId};

/// Data, initial model and optimizer taken from a protocol setup, so a
/// baseline sees exactly the partition the gossip run would use.
#[derive(Debug, Clone)]
pub struct BaselineInputs {
    pub locals: Vec<LocalDataset>,
    pub test: Vec<Sample>,
    pub w0: DenseNetwork,
    pub optimizer: OptimizerConfig,
    pub costs: CostParams,
    pub seed: u64,
}

impl BaselineInputs {
    /// Uses the nodes present in slot 0.
    pub fn from_setup(setup: ExperimentSetup) -> Result<Self, ProtocolError> {
        let optimizer = setup.model.optimizer;
        let costs = setup.params.costs;
        let seed = setup.master_seed;
        let mut exp = Experiment::new(setup)?;
        exp.handle_churn(0)?;
        Ok(Self {
            locals: exp.states().values().map(|s| s.local.clone()).collect(),
            test: exp.test_set().to_vec(),
            w0: exp.initial_model().clone(),
            optimizer,
            costs,
            seed,
        })
    }

    fn node_data(local: &LocalDataset) -> Vec<Sample> {
        local.train.iter().chain(&local.validation).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FedAvgConfig {
    pub clients_per_round: usize,
    pub rounds: usize,
    pub local_epochs: u32,
    pub seed: u64,
}

/// Clients per round matching the mean node degree of `schedule`, clamped
/// to `[1, nodes]`.
pub fn calibrated_clients(schedule: &ContactSchedule, nodes: usize) -> usize {
    (schedule.mean_degree().round() as usize).clamp(1, nodes.max(1))
}

fn train_seed(master: u64, t: usize, v: NodeId) -> u64 {
    seed::derive_keyed(master, "baseline-train", &[t as u64, v.0])
}

fn round_metrics(
    models: &[&DenseNetwork],
    test: &[Sample],
    round: usize,
    totals: Totals,
    beta: f64,
) -> Result<RoundMetrics, ProtocolError> {
    let mut sums = [0.0; 5];
    for m in models {
        let e = evaluate(m, test, LossKind::CrossEntropy)?;
        for (s, x) in sums.iter_mut().zip([e.accuracy, e.mean_loss, e.macro_f1, e.macro_precision, e.macro_recall]) {
            *s += x;
        }
    }
    let n = models.len().max(1) as f64;
    Ok(RoundMetrics {
        round,
        present_nodes: models.len(),
        mean_acc: sums[0] / n,
        mean_loss: sums[1] / n,
        macro_f1: sums[2] / n,
        macro_precision: sums[3] / n,
        macro_recall: sums[4] / n,
        training: totals.training,
        evaluation: totals.evaluation,
        communication: totals.communication,
        objective: totals.objective(beta),
    })
}

/// One server model trained one epoch per round on all local data pooled in
/// node order. `max_rounds == 0` yields just the initial model's row (round 0).
pub fn run_centralized(inputs: &BaselineInputs, stopping: &StoppingRule) -> Result<Vec<RoundMetrics>, ProtocolError> {
    let data: Vec<Sample> = inputs.locals.iter().flat_map(BaselineInputs::node_data).collect();
    if data.is_empty() {
        return Err(ProtocolError::Config("centralized baseline needs data".into()));
    }
    let beta = inputs.costs.beta;
    let mut totals = Totals::default();
    if stopping.max_rounds == 0 {
        return Ok(vec![round_metrics(&[&inputs.w0], &inputs.test, 0, totals, beta)?]);
    }
    let mut model = inputs.w0.clone();
    let mut tracker = stopping.tracker();
    let mut rows = Vec::new();
    for t in 0..stopping.max_rounds {
        model = train_epochs(
            &model,
            &data,
            1,
            &inputs.optimizer,
            LossKind::CrossEntropy,
            train_seed(inputs.seed, t, NodeId(0)),
        )?;
        totals.training += inputs.costs.training_cost(1, data.len());
        let row = round_metrics(&[&model], &inputs.test, t + 1, totals, beta)?;
        rows.push(row);
        if tracker.observe(row.mean_acc) {
            break;
        }
    }
    Ok(rows)
}

/// Federated averaging: each round a uniform client sample trains from the
/// global model and the server averages with weights proportional to local
/// data size. Every participating client down- and uploads one model over
/// the infrastructure link.
pub fn run_fedavg(
    inputs: &BaselineInputs,
    cfg: &FedAvgConfig,
    stopping: &StoppingRule,
) -> Result<Vec<RoundMetrics>, ProtocolError> {
    let n = inputs.locals.len();
    if cfg.clients_per_round == 0 || cfg.clients_per_round > n {
        return Err(ProtocolError::Config(format!("clients_per_round {} outside [1, {n}]", cfg.clients_per_round)));
    }
    let data: Vec<Vec<Sample>> = inputs.locals.iter().map(BaselineInputs::node_data).collect();
    let beta = inputs.costs.beta;
    let transfer = 2.0 * inputs.costs.model_msg_bytes as f64 * inputs.costs.c_infra;
    let mut totals = Totals::default();
    let mut global = inputs.w0.clone();
    let mut tracker = stopping.tracker();
    let mut rows = Vec::new();
    for t in 0..cfg.rounds.min(stopping.max_rounds) {
        let mut rng = seed::rng(seed::derive_keyed(cfg.seed, "fedavg-clients", &[t as u64]));
        let mut clients = index::sample(&mut rng, n, cfg.clients_per_round).into_vec();
        clients.sort_unstable();
        let mut models = Vec::with_capacity(clients.len());
        let mut sizes = Vec::with_capacity(clients.len());
        for &c in &clients {
            let v = inputs.locals[c].node;
            let local = train_epochs(
                &global,
                &data[c],
                cfg.local_epochs as usize,
                &inputs.optimizer,
                LossKind::CrossEntropy,
                train_seed(cfg.seed, t, v),
            )?;
            totals.training += inputs.costs.training_cost(cfg.local_epochs, data[c].len());
            totals.communication += transfer;
            models.push(local);
            sizes.push(data[c].len() as f64);
        }
        let total: f64 = sizes.iter().sum();
        if total > 0.0 {
            let weights: Vec<f64> = sizes.iter().map(|d| d / total).collect();
            let refs: Vec<&DenseNetwork> = models.iter().collect();
            global = merge_models(&refs, &weights)?;
        }
        let row = round_metrics(&[&global], &inputs.test, t + 1, totals, beta)?;
        rows.push(row);
        if tracker.observe(row.mean_acc) {
            break;
        }
    }
    Ok(rows)
}

/// Every node trains one epoch per round on its own data and never
/// communicates. Rows average over nodes.
pub fn run_local_only(inputs: &BaselineInputs, stopping: &StoppingRule) -> Result<Vec<RoundMetrics>, ProtocolError> {
    let data: Vec<Vec<Sample>> = inputs.locals.iter().map(BaselineInputs::node_data).collect();
    let beta = inputs.costs.beta;
    let mut totals = Totals::default();
    let mut models: Vec<DenseNetwork> = vec![inputs.w0.clone(); inputs.locals.len()];
    let mut tracker = stopping.tracker();
    let mut rows = Vec::new();
    for t in 0..stopping.max_rounds {
        for ((model, local), d) in models.iter_mut().zip(&inputs.locals).zip(&data) {
            if d.is_empty() {
                continue;
            }
            *model = train_epochs(
                model,
                d,
                1,
                &inputs.optimizer,
                LossKind::CrossEntropy,
                train_seed(inputs.seed, t, local.node),
            )?;
            totals.training += inputs.costs.training_cost(1, d.len());
        }
        let refs: Vec<&DenseNetwork> = models.iter().collect();
        let row = round_metrics(&refs, &inputs.test, t + 1, totals, beta)?;
        rows.push(row);
        if tracker.observe(row.mean_acc) {
            break;
        }
    }
    Ok(rows)
}

/// The protocol metrics schema with a leading `scheme` column.
pub fn write_scheme_metrics_csv(scheme: &str, rows: &[RoundMetrics], out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| std::io::Error::other(e);
    w.write_record(std::iter::once("scheme").chain(METRICS_HEADER)).map_err(io)?;
    for r in rows {
        w.write_record([
            scheme.to_string(),
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::local_from_indices;
    use crate::dataset::SourceDataset;
    use crate::nn::{init_network, Activation, LayerSpec};
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = seed::rng(seed);
        (0..n)
            .map(|i| {
                let c = i % 3;
                let f = (0..4).map(|j| if j == c { 1.0 } else { 0.0 } + rng.gen_range(-0.3..0.3)).collect();
                Sample::class(f, c)
            })
            .collect()
    }

    fn inputs(locals: Vec<LocalDataset>, optimizer: OptimizerConfig) -> BaselineInputs {
        let layers = [LayerSpec::new(4, 6, Activation::Relu), LayerSpec::new(6, 3, Activation::Softmax)];
        BaselineInputs {
            locals,
            test: blobs(60, 99),
            w0: init_network(&layers, 7).unwrap(),
            optimizer,
            costs: CostParams::default(),
            seed: 11,
        }
    }

    fn local(node: u64, samples: Vec<Sample>) -> LocalDataset {
        let src = SourceDataset { name: "t".into(), samples, num_classes: 3, image_shape: None };
        let idx: Vec<usize> = (0..src.len()).collect();
        local_from_indices(&src, NodeId(node), &idx, 0.0)
    }

    fn rule(max_rounds: usize) -> StoppingRule {
        StoppingRule { max_rounds, patience: max_rounds, min_improvement: 0.005 }
    }

    #[test]
    fn fedavg_with_identical_clients_matches_full_batch_centralized() {
        let shared = blobs(30, 1);
        let full_batch = OptimizerConfig::sgd(0.1, 0.0, 30);
        let fed = inputs((0..4).map(|v| local(v, shared.clone())).collect(), full_batch);
        let central = inputs(vec![local(0, shared.clone())], full_batch);
        let cfg = FedAvgConfig { clients_per_round: 4, rounds: 1, local_epochs: 1, seed: 3 };
        let f = run_fedavg(&fed, &cfg, &rule(1)).unwrap();
        let c = run_centralized(&central, &rule(1)).unwrap();
        assert!((f[0].mean_loss - c[0].mean_loss).abs() < 1e-9);
        assert!((f[0].mean_acc - c[0].mean_acc).abs() < 1e-12);
    }

    #[test]
    fn single_client_fedavg_is_that_client() {
        let x = inputs(vec![local(0, blobs(30, 2))], OptimizerConfig::sgd(0.05, 0.9, 8));
        let cfg = FedAvgConfig { clients_per_round: 1, rounds: 3, local_epochs: 1, seed: x.seed };
        let f = run_fedavg(&x, &cfg, &rule(3)).unwrap();
        let l = run_local_only(&x, &rule(3)).unwrap();
        for (a, b) in f.iter().zip(&l) {
            assert_eq!(a.mean_acc, b.mean_acc);
            assert_eq!(a.mean_loss, b.mean_loss);
        }
    }

    #[test]
    fn local_only_single_node_equals_centralized() {
        let x = inputs(vec![local(0, blobs(45, 3))], OptimizerConfig::sgd(0.05, 0.9, 8));
        let a = run_local_only(&x, &rule(5)).unwrap();
        let b = run_centralized(&x, &rule(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_rounds_reports_initial_model() {
        let x = inputs(vec![local(0, blobs(30, 4))], OptimizerConfig::sgd(0.05, 0.9, 8));
        let rows = run_centralized(&x, &rule(0)).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].round, 0);
        let e = evaluate(&x.w0, &x.test, LossKind::CrossEntropy).unwrap();
        assert_eq!(rows[0].mean_acc, e.accuracy);
    }

    #[test]
    fn single_class_node_has_zero_recall_elsewhere() {
        let only_zero: Vec<Sample> =
            blobs(60, 5).into_iter().filter(|s| s.label == crate::nn::Label::Class(0)).collect();
        let x = inputs(vec![local(0, only_zero)], OptimizerConfig::sgd(0.1, 0.9, 4));
        let rows = run_local_only(&x, &rule(10)).unwrap();
        let last = rows.last().unwrap();
        // every prediction is class 0, so recall is 1 on class 0 and 0 on the others
        assert!((last.macro_recall - 1.0 / 3.0).abs() < 1e-12, "{last:?}");
    }

    #[test]
    fn fedavg_rejects_bad_client_counts_and_charges_infra() {
        let x = inputs(vec![local(0, blobs(30, 6)), local(1, blobs(30, 7))], OptimizerConfig::sgd(0.05, 0.9, 8));
        let bad = FedAvgConfig { clients_per_round: 3, rounds: 1, local_epochs: 1, seed: 0 };
        assert!(run_fedavg(&x, &bad, &rule(1)).is_err());
        let ok = FedAvgConfig { clients_per_round: 2, rounds: 2, ..bad };
        let rows = run_fedavg(&x, &ok, &rule(2)).unwrap();
        let per_round = 2.0 * 2.0 * x.costs.model_msg_bytes as f64 * x.costs.c_infra;
        assert!((rows[1].communication - 2.0 * per_round).abs() < 1e-15);
    }

    #[test]
    fn scheme_csv_has_extra_column() {
        let x = inputs(vec![local(0, blobs(30, 8))], OptimizerConfig::sgd(0.05, 0.9, 8));
        let rows = run_centralized(&x, &rule(2)).unwrap();
        let mut buf = Vec::new();
        write_scheme_metrics_csv("centralized", &rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("scheme,round,present_nodes,"));
        assert_eq!(text.lines().count(), 3);
    }
}
