use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::report::{summarize, write_summary_csv, SummaryRow};
use super::{preset, HarnessError, ScenarioConfig};
use crate::baselines::{
    calibrated_clients, run_centralized, run_fedavg, run_local_only, write_scheme_metrics_csv, BaselineInputs,
    FedAvgConfig,
};
use crate::dataset::{LocalDataset, SourceDataset};
use crate::protocol::{write_message_trace, write_metrics_csv, Experiment, ExperimentResult, RoundMetrics};
use crate::seed;
use crate::tuner::PolicySpec;

/// Environment variable naming the default output root.
pub const OUTPUT_DIR_ENV: &str = "OGL_OUTPUT_DIR";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// A compared scheme: a gossip policy or one of the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    Gossip(PolicySpec),
    Centralized,
    FedAvg,
    LocalOnly,
}

impl Scheme {
    /// Directory and report label.
    pub fn label(&self) -> String {
        match self {
            Scheme::Gossip(PolicySpec::Random) => "random-gl".into(),
            Scheme::Gossip(PolicySpec::Dp) => "dp".into(),
            Scheme::Gossip(PolicySpec::Mtune(_)) => "ogl".into(),
            Scheme::Gossip(PolicySpec::Fixed { epochs, k }) => format!("fixed-{epochs}-{k}"),
            Scheme::Centralized => "centralized".into(),
            Scheme::FedAvg => "fedavg".into(),
            Scheme::LocalOnly => "local-only".into(),
        }
    }
}

impl FromStr for Scheme {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "centralized" => Scheme::Centralized,
            "fedavg" => Scheme::FedAvg,
            "local-only" => Scheme::LocalOnly,
            other => Scheme::Gossip(other.parse().map_err(|_| {
                HarnessError::Config(format!(
                    "unknown scheme {other:?}; expected centralized, fedavg, local-only or a policy \
                     (random, dp, mtune:<file>, fixed:<Z>,<k>)"
                ))
            })?),
        })
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Gossip(p) => write!(f, "{p}"),
            Scheme::Centralized => f.write_str("centralized"),
            Scheme::FedAvg => f.write_str("fedavg"),
            Scheme::LocalOnly => f.write_str("local-only"),
        }
    }
}

impl TryFrom<String> for Scheme {
    type Error = HarnessError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        s.to_string()
    }
}

/// One finished `(scheme, seed)` cell.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scheme: Scheme,
    pub seed: u64,
    pub rows: Vec<RoundMetrics>,
    pub manifest: Vec<u8>,
    pub manifest_hash: u64,
    /// Present for gossip schemes.
    pub result: Option<ExperimentResult>,
}

impl RunOutcome {
    pub fn final_metrics(&self) -> Option<&RoundMetrics> {
        self.rows.last()
    }
}

fn manifest_csv<'a>(locals: impl IntoIterator<Item = &'a LocalDataset>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["node_id", "sample_index", "role"]).expect("in-memory write");
    for local in locals {
        for (role, idx) in [("train", &local.train_indices), ("validation", &local.validation_indices)] {
            for i in idx {
                w.write_record([local.node.to_string(), i.to_string(), role.to_string()]).expect("in-memory write");
            }
        }
    }
    w.into_inner().expect("in-memory flush")
}

/// Hash of a partition manifest, as written to `run.json`.
pub fn manifest_hash(manifest: &[u8]) -> u64 {
    seed::fnv1a64(&String::from_utf8_lossy(manifest))
}

/// Runs one scheme on one seed of `cfg`. The manifest covers the nodes
/// present at slot 0.
pub fn run_scheme(
    cfg: &ScenarioConfig,
    base: &SourceDataset,
    scheme: &Scheme,
    seed: u64,
    record_messages: bool,
) -> Result<RunOutcome, HarnessError> {
    let policy_spec = match scheme {
        Scheme::Gossip(p) => p.clone(),
        _ => cfg.policy.clone(),
    };
    let (policy, bytes) = ScenarioConfig::resolve_policy(&policy_spec)?;
    let mut setup = cfg.setup(base, policy, bytes, seed)?;
    setup.params.record_messages = record_messages;
    let (rows, manifest, result) = match scheme {
        Scheme::Gossip(_) => {
            let mut exp = Experiment::new(setup)?;
            exp.handle_churn(0)?;
            let manifest = manifest_csv(exp.states().values().map(|s| &s.local));
            let result = exp.run()?;
            (result.rounds.clone(), manifest, Some(result))
        }
        baseline => {
            let nodes = setup.schedule.present_nodes(0).len();
            let clients = calibrated_clients(&setup.schedule, nodes);
            let inputs = BaselineInputs::from_setup(setup)?;
            let manifest = manifest_csv(&inputs.locals);
            let rows = match baseline {
                Scheme::Centralized => run_centralized(&inputs, &cfg.stopping)?,
                Scheme::LocalOnly => run_local_only(&inputs, &cfg.stopping)?,
                _ => {
                    let fed = FedAvgConfig {
                        clients_per_round: clients,
                        rounds: cfg.stopping.max_rounds,
                        local_epochs: cfg.fedavg_local_epochs,
                        seed: inputs.seed,
                    };
                    run_fedavg(&inputs, &fed, &cfg.stopping)?
                }
            };
            (rows, manifest, None)
        }
    };
    let manifest_hash = manifest_hash(&manifest);
    Ok(RunOutcome { scheme: scheme.clone(), seed, rows, manifest, manifest_hash, result })
}

#[derive(Serialize)]
struct RunSummary<'a> {
    scenario: &'a str,
    scheme: String,
    seed: u64,
    cutoff: usize,
    manifest_hash: String,
    infra_bytes: u64,
    infra_cost: f64,
    final_metrics: Option<&'a RoundMetrics>,
}

/// Writes `metrics.csv`, `manifest.csv`, `run.json` and, for gossip runs,
/// `energy_events.csv` (plus `messages.csv` when recorded) into `dir`.
pub fn write_run(out: &RunOutcome, scenario: &str, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let file = |name: &str| std::fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
    match &out.result {
        Some(r) => {
            write_metrics_csv(&out.rows, file("metrics.csv")?)?;
            r.ledger.write_event_log(file("energy_events.csv")?)?;
            if !r.messages.is_empty() {
                write_message_trace(&r.messages, file("messages.csv")?)?;
            }
        }
        None => write_scheme_metrics_csv(&out.scheme.label(), &out.rows, file("metrics.csv")?)?,
    }
    std::fs::write(dir.join("manifest.csv"), &out.manifest)?;
    let summary = RunSummary {
        scenario,
        scheme: out.scheme.to_string(),
        seed: out.seed,
        cutoff: out.rows.last().map_or(0, |m| m.round),
        manifest_hash: format!("{:016x}", out.manifest_hash),
        infra_bytes: out.result.as_ref().map_or(0, |r| r.ledger.infra_bytes()),
        infra_cost: out.result.as_ref().map_or(0.0, |r| r.ledger.infra_cost()),
        final_metrics: out.final_metrics(),
    };
    let mut json = serde_json::to_vec_pretty(&summary).map_err(|e| HarnessError::Config(e.to_string()))?;
    json.push(b'\n');
    std::fs::write(dir.join("run.json"), json)?;
    Ok(())
}

fn default_confidence() -> f64 {
    0.95
}

/// A seed sweep over several schemes. Exactly one of `preset` and
/// `scenario` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl SuiteConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn scenario(&self) -> Result<ScenarioConfig, HarnessError> {
        let cfg = match (&self.preset, &self.scenario) {
            (Some(name), None) => preset(name)?,
            (None, Some(s)) => s.clone(),
            _ => return Err(HarnessError::Config("suite needs exactly one of `preset` and `scenario`".into())),
        };
        cfg.validate()?;
        if self.schemes.is_empty() || self.seeds.is_empty() {
            return Err(HarnessError::Config("suite needs at least one scheme and one seed".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(HarnessError::Config(format!("confidence {} outside (0, 1)", self.confidence)));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub summary: Vec<SummaryRow>,
    /// `(scheme label, seed, error)` of failed cells.
    pub failures: Vec<(String, u64, String)>,
}

/// Runs every `(scheme, seed)` cell, writing each to
/// `out/<scheme>/seed-<n>/`, then `summary.csv` and `failures.csv`.
/// A failing cell is recorded and the suite carries on.
pub fn run_suite(suite: &SuiteConfig, out: &Path) -> Result<SuiteReport, HarnessError> {
    let cfg = suite.scenario()?;
    let base = cfg.load_base_source()?;
    let cells: Vec<(usize, &Scheme, u64)> = suite
        .schemes
        .iter()
        .flat_map(|s| suite.seeds.iter().map(move |&seed| (s, seed)))
        .enumerate()
        .map(|(i, (s, seed))| (i, s, seed))
        .collect();
    let results: Mutex<Vec<Option<Result<RoundMetrics, String>>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    let threads = suite.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(_, scheme, seed)) = cells.get(i) else { break };
                let dir = out.join(scheme.label()).join(format!("seed-{seed}"));
                let cell = run_scheme(&cfg, &base, scheme, seed, false)
                    .and_then(|o| write_run(&o, &cfg.name, &dir).map(|_| o))
                    .map(|o| *o.final_metrics().expect("runs have at least one round"))
                    .map_err(|e| e.to_string());
                match &cell {
                    Ok(m) => info!(
                        "{} seed {seed}: acc {:.4} objective {:.4} at round {}",
                        scheme.label(),
                        m.mean_acc,
                        m.objective,
                        m.round
                    ),
                    Err(e) => warn!("{} seed {seed} failed: {e}", scheme.label()),
                }
                results.lock().expect("no poisoned workers")[i] = Some(cell);
            });
        }
    });
    let results = results.into_inner().expect("no poisoned workers");
    let mut finals = Vec::new();
    let mut failures = Vec::new();
    for ((_, scheme, seed), r) in cells.iter().zip(results) {
        match r.expect("every cell ran") {
            Ok(m) => finals.push((scheme.label(), m)),
            Err(e) => failures.push((scheme.label(), *seed, e)),
        }
    }
    let summary = summarize(&finals, suite.confidence);
    std::fs::create_dir_all(out)?;
    write_summary_csv(&summary, std::fs::File::create(out.join("summary.csv"))?)?;
    let mut w =
        csv::Writer::from_path(out.join("failures.csv")).map_err(|e| HarnessError::Io(std::io::Error::other(e)))?;
    let io = |e: csv::Error| HarnessError::Io(std::io::Error::other(e));
    w.write_record(["scheme", "seed", "error"]).map_err(io)?;
    for (s, seed, e) in &failures {
        w.write_record([s.clone(), seed.to_string(), e.clone()]).map_err(io)?;
    }
    w.flush()?;
    Ok(SuiteReport { summary, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_strings() {
        for s in ["centralized", "fedavg", "local-only", "dp", "random", "fixed:3,2", "mtune:m.bin"] {
            let parsed: Scheme = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        assert_eq!("mtune:m.bin".parse::<Scheme>().unwrap().label(), "ogl");
        assert!("gossip".parse::<Scheme>().is_err());
    }

    #[test]
    fn suite_requires_one_scenario_source() {
        let s = SuiteConfig {
            preset: None,
            scenario: None,
            schemes: vec![Scheme::Centralized],
            seeds: vec![1],
            confidence: 0.95,
            threads: None,
        };
        assert!(s.scenario().is_err());
        let ok = SuiteConfig { preset: Some("synthetic-smoke".into()), ..s };
        assert!(ok.scenario().is_ok());
    }
}
