use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::dataset::SourceDataset;
use crate::harness::ScenarioConfig;
use crate::protocol::{run_experiment, DecisionRecord, ExperimentResult};
use crate::seed;
use crate::topology::NodeId;
use crate::tuner::{Policy, RolloutProfile, TunerFeatures, FEATURE_DIM, FEATURE_NAMES};

/// Sentinel threshold factor used when a node merged nothing: the label sits
/// just below the smallest loss it could have picked.
const EMPTY_SELECTION_FACTOR: f64 = 0.95;

/// One training example for the tuning model.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: TunerFeatures,
    pub z_label: f64,
    pub tau_label: f64,
    pub scenario: String,
    pub config: usize,
    pub rollout: usize,
    pub node: NodeId,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Scenario space; config `i` uses scenario `i mod len`.
    pub scenarios: Vec<ScenarioConfig>,
    pub configs: usize,
    pub rollouts_per_config: usize,
    pub seed: u64,
    /// Test samples used by rollout metrics.
    pub metrics_test_limit: Option<usize>,
    /// End each rollout as soon as it reaches the scenario's target instead
    /// of at the stopping rule's cut-off.
    #[serde(default)]
    pub stop_at_target: bool,
    /// Rollouts count as reaching the target only at `target + target_margin`,
    /// so imitated actions clear the target on unseen seeds too.
    #[serde(default)]
    pub target_margin: f64,
    /// Worker threads over configs; defaults to the available parallelism.
    #[serde(default)]
    pub threads: Option<usize>,
}

/// Ordering key of a rollout: reaching the target beats not reaching it;
/// among those that reach it the lower objective wins, otherwise the higher
/// final accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutScore {
    pub reached_target: bool,
    pub value: f64,
}

impl RolloutScore {
    fn better_than(&self, other: &RolloutScore) -> bool {
        match (self.reached_target, other.reached_target) {
            (true, false) => true,
            (false, true) => false,
            _ => self.value > other.value,
        }
    }
}

pub fn rollout_score(result: &ExperimentResult, target: f64) -> RolloutScore {
    let last = result.final_metrics().expect("finished run has at least one round");
    if last.mean_acc >= target {
        RolloutScore { reached_target: true, value: -last.objective }
    } else {
        RolloutScore { reached_target: false, value: last.mean_acc }
    }
}

/// Threshold equivalent of a selection: the largest merged loss, or a value
/// just below the smallest available loss when nothing was merged.
pub fn tau_label(record: &DecisionRecord) -> f64 {
    if let Some(max) = record.merged_losses.iter().copied().reduce(f64::max) {
        return max;
    }
    let floor = record.advertised_losses.iter().copied().reduce(f64::min).unwrap_or(record.own_loss);
    EMPTY_SELECTION_FACTOR * floor
}

/// Labels every decision of one rollout with the action it took.
pub fn label_rollout(result: &ExperimentResult, scenario: &str, config: usize, rollout: usize) -> Vec<LabeledSample> {
    result
        .decisions
        .iter()
        .map(|d| LabeledSample {
            features: d.features,
            z_label: d.epochs as f64,
            tau_label: tau_label(d),
            scenario: scenario.to_string(),
            config,
            rollout,
            node: d.node,
            slot: d.slot,
        })
        .collect()
}

/// Runs `rollouts_per_config` randomized rollouts for each sampled config,
/// with profiles stratified over the action space, and keeps the decisions of the best-scoring one. Output is sorted by
/// `(config, slot, node)`.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<LabeledSample>, OrchestratorError> {
    if cfg.scenarios.is_empty() || cfg.rollouts_per_config == 0 {
        return Err(OrchestratorError::Config("need at least one scenario and one rollout per config".into()));
    }
    if !(0.0..1.0).contains(&cfg.target_margin) {
        return Err(OrchestratorError::Config(format!("target margin {} outside [0, 1)", cfg.target_margin)));
    }
    let mut sources: HashMap<String, SourceDataset> = HashMap::new();
    for scenario in &cfg.scenarios {
        if !sources.contains_key(&scenario.name) {
            let base = scenario.load_base_source().map_err(|e| OrchestratorError::Config(e.to_string()))?;
            sources.insert(scenario.name.clone(), base);
        }
    }
    let results: Mutex<Vec<Option<ConfigLabels>>> = Mutex::new((0..cfg.configs).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let threads = cfg.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, cfg.configs.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cfg.configs {
                    break;
                }
                let scenario = &cfg.scenarios[i % cfg.scenarios.len()];
                let labeled = best_rollout(cfg, i, scenario, &sources[&scenario.name]);
                results.lock().expect("no poisoned workers")[i] = Some(labeled);
            });
        }
    });
    let mut corpus = Vec::new();
    for r in results.into_inner().expect("no poisoned workers") {
        corpus.extend(r.expect("every config ran")?);
    }
    corpus.sort_by_key(|s| (s.config, s.slot, s.node));
    Ok(corpus)
}

type ConfigLabels = Result<Vec<LabeledSample>, OrchestratorError>;

/// Runs the rollouts of config `i` and labels the best one.
fn best_rollout(cfg: &CorpusConfig, i: usize, scenario: &ScenarioConfig, base: &SourceDataset) -> ConfigLabels {
    let config_seed = seed::derive_keyed(cfg.seed, "corpus-config", &[i as u64]);
    let mut best: Option<(RolloutScore, ExperimentResult, usize)> = None;
    let mut rng = seed::rng(seed::derive_keyed(cfg.seed, "corpus-profiles", &[i as u64]));
    let profiles = RolloutProfile::stratified(&mut rng, cfg.rollouts_per_config, scenario.z_max);
    for (j, profile) in profiles.into_iter().enumerate() {
        let mut setup = scenario
            .setup(base, Policy::Rollout(profile), 0, config_seed)
            .map_err(|e| OrchestratorError::Config(format!("config {i}: {e}")))?;
        if cfg.stop_at_target {
            setup.params.stop_at_target = Some(scenario.target_accuracy);
        }
        setup.params.record_decisions = true;
        if cfg.metrics_test_limit.is_some() {
            setup.params.metrics_test_limit = cfg.metrics_test_limit;
        }
        let result =
            run_experiment(setup).map_err(|e| OrchestratorError::Rollout { config: i, source: Box::new(e) })?;
        let score = rollout_score(&result, scenario.target_accuracy + cfg.target_margin);
        info!(
            "config {i} ({}) rollout {j}: {:?} -> rounds {}, score {:?}",
            scenario.name, profile, result.cutoff, score
        );
        if best.as_ref().is_none_or(|(b, _, _)| score.better_than(b)) {
            best = Some((score, result, j));
        }
    }
    let (_, result, j) = best.expect("at least one rollout");
    Ok(label_rollout(&result, &scenario.name, i, j))
}

const PROVENANCE: [&str; 5] = ["scenario", "config", "rollout", "node", "slot"];

/// CSV with the feature columns, `z_label,tau_label` and provenance columns.
pub fn write_corpus(samples: &[LabeledSample], out: impl Write) -> Result<(), OrchestratorError> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| OrchestratorError::Io(std::io::Error::other(e));
    let header: Vec<&str> = FEATURE_NAMES.iter().copied().chain(["z_label", "tau_label"]).chain(PROVENANCE).collect();
    w.write_record(&header).map_err(csv_err)?;
    for s in samples {
        let mut row: Vec<String> = s.features.0.iter().map(|x| x.to_string()).collect();
        row.extend([s.z_label.to_string(), s.tau_label.to_string()]);
        row.extend([
            s.scenario.clone(),
            s.config.to_string(),
            s.rollout.to_string(),
            s.node.to_string(),
            s.slot.to_string(),
        ]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(input: impl Read) -> Result<Vec<LabeledSample>, OrchestratorError> {
    let mut reader = csv::Reader::from_reader(input);
    let expected = FEATURE_DIM + 2 + PROVENANCE.len();
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let bad = |message: String| OrchestratorError::CorpusFormat { line, message };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != expected {
            return Err(bad(format!("expected {expected} columns, found {}", rec.len())));
        }
        let num = |c: usize| rec[c].parse::<f64>().map_err(|_| bad(format!("bad number in column {}", c + 1)));
        let int = |c: usize| rec[c].parse::<u64>().map_err(|_| bad(format!("bad integer in column {}", c + 1)));
        let mut features = [0.0; FEATURE_DIM];
        for (c, f) in features.iter_mut().enumerate() {
            *f = num(c)?;
        }
        let p = FEATURE_DIM + 2;
        out.push(LabeledSample {
            features: TunerFeatures(features),
            z_label: num(FEATURE_DIM)?,
            tau_label: num(FEATURE_DIM + 1)?,
            scenario: rec[p].to_string(),
            config: int(p + 1)? as usize,
            rollout: int(p + 2)? as usize,
            node: NodeId(int(p + 3)?),
            slot: int(p + 4)? as usize,
        });
    }
    Ok(out)
}
