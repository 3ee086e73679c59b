use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use ogl_core::harness::{
    output_root, run_scheme, run_suite, summarize_dir, write_run, write_summary_csv, Scheme, SuiteConfig,
    OUTPUT_DIR_ENV, PRESETS,
};
use ogl_core::nn::OptimizerConfig;
use ogl_core::orchestrator::{
    export_mtune, generate_corpus, import_mtune, read_corpus, train_mtune, write_corpus, CorpusConfig, MtuneTrainConfig,
};
use ogl_core::tuner::FEATURE_NAMES;
use ogl_core::{preset, HarnessError, PolicySpec, ScenarioConfig};

#[derive(Parser)]
#[command(name = "ogl", version, about = "Energy-aware gossip learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario with one scheme and seed.
    Run(RunArgs),
    /// Run a seed sweep over several schemes.
    Suite {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to <root>/suite-<scenario>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Training-corpus tools.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Tuning-model tools.
    #[command(subcommand)]
    Mtune(MtuneCommand),
    /// Summarize every metrics.csv under a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        /// Also write the summary here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a preset as JSON, or list presets when no name is given.
    Preset { name: Option<String> },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gossip policy: random, dp, mtune:<file> or fixed:<Z>,<k>.
    #[arg(long, conflicts_with = "scheme")]
    policy: Option<String>,
    /// Any scheme, including centralized, fedavg and local-only.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to <root>/<scenario>/<scheme>/seed-<n>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write messages.csv.
    #[arg(long)]
    record_messages: bool,
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Label randomized rollouts and write a corpus CSV.
    Generate {
        /// Corpus JSON; otherwise built from the flags below.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Scenario presets to sample configs from (repeatable).
        #[arg(long)]
        preset: Vec<String>,
        #[arg(long, default_value_t = 20)]
        configs: usize,
        #[arg(long, default_value_t = 4)]
        rollouts: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        metrics_test_limit: Option<usize>,
        /// End rollouts once they reach the target accuracy.
        #[arg(long)]
        stop_at_target: bool,
        /// Accuracy above the target a rollout needs to count as reaching it.
        #[arg(long, default_value_t = 0.0)]
        target_margin: f64,
        /// Worker threads (defaults to the available parallelism).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MtuneCommand {
    /// Cross-validate and train a tuning model on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        #[arg(long, default_value_t = 500)]
        max_epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the cross-validation report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Describe a tuning-model file.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

/// Failures mapped to exit codes 1 (bad input) and 2 (run failure).
enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.into())
        } else {
            Failure::Run(e.into())
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn run_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Run(e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("run failed: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(args) => run(args),
        Command::Suite { config, out } => {
            let suite = SuiteConfig::from_json_file(&config)?;
            let name = suite.scenario()?.name;
            let out = out.unwrap_or_else(|| output_root().join(format!("suite-{name}")));
            let report = run_suite(&suite, &out)?;
            write_summary_csv(&report.summary, std::io::stdout()).map_err(run_err)?;
            info!("suite written to {}", out.display());
            if report.failures.is_empty() {
                Ok(())
            } else {
                Err(run_err(anyhow::anyhow!("{} of the suite's runs failed; see failures.csv", report.failures.len())))
            }
        }
        Command::Corpus(CorpusCommand::Generate {
            config,
            preset: presets,
            configs,
            rollouts,
            seed,
            metrics_test_limit,
            stop_at_target,
            target_margin,
            threads,
            out,
        }) => {
            let cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| path.display().to_string())
                        .map_err(config_err)?;
                    serde_json::from_str::<CorpusConfig>(&text)
                        .with_context(|| path.display().to_string())
                        .map_err(config_err)?
                }
                None => {
                    if presets.is_empty() {
                        return Err(config_err(anyhow::anyhow!("give --config or at least one --preset")));
                    }
                    let scenarios = presets.iter().map(|p| preset(p)).collect::<Result<Vec<_>, _>>()?;
                    CorpusConfig {
                        scenarios,
                        configs,
                        rollouts_per_config: rollouts,
                        seed,
                        metrics_test_limit,
                        stop_at_target,
                        target_margin,
                        threads,
                    }
                }
            };
            let corpus = generate_corpus(&cfg).map_err(HarnessError::from)?;
            let file = std::fs::File::create(&out).with_context(|| out.display().to_string()).map_err(config_err)?;
            write_corpus(&corpus, std::io::BufWriter::new(file)).map_err(run_err)?;
            info!("{} labeled samples written to {}", corpus.len(), out.display());
            Ok(())
        }
        Command::Mtune(MtuneCommand::Train { corpus, out, folds, patience, max_epochs, lr, batch, seed, report }) => {
            let file =
                std::fs::File::open(&corpus).with_context(|| corpus.display().to_string()).map_err(config_err)?;
            let samples = read_corpus(file).map_err(config_err)?;
            let cfg = MtuneTrainConfig {
                folds,
                patience,
                max_epochs,
                optimizer: OptimizerConfig::adam(lr, batch),
                ..MtuneTrainConfig::default()
            };
            let (model, cv) = train_mtune(&samples, &cfg, seed).map_err(HarnessError::from)?;
            let bytes = export_mtune(&model, &out).map_err(HarnessError::from)?;
            println!(
                "cv mse {:.6} +- {:.6} over {folds} folds; final model {} epochs; {bytes} bytes",
                cv.mean_mse, cv.std_mse, cv.final_epochs
            );
            if let Some(path) = report {
                let json = serde_json::to_string_pretty(&cv).map_err(run_err)?;
                std::fs::write(&path, json + "\n").with_context(|| path.display().to_string()).map_err(run_err)?;
            }
            Ok(())
        }
        Command::Mtune(MtuneCommand::Inspect { model }) => {
            let (m, bytes) = import_mtune(&model).map_err(HarnessError::from)?;
            println!("file: {} ({bytes} bytes)", model.display());
            for (i, l) in m.network.layers().iter().enumerate() {
                println!("layer {i}: {} -> {} {:?}", l.input_dim, l.output_dim, l.activation);
            }
            println!("parameters: {}", m.network.param_count());
            println!("{:<24} {:>14} {:>14}", "feature", "mean", "std");
            for ((name, mean), std) in FEATURE_NAMES.iter().zip(&m.scaler.mean).zip(&m.scaler.std) {
                println!("{name:<24} {mean:>14.6} {std:>14.6}");
            }
            Ok(())
        }
        Command::Report { input, confidence, out } => {
            if !(confidence > 0.0 && confidence < 1.0) {
                return Err(config_err(anyhow::anyhow!("confidence must lie in (0, 1)")));
            }
            let rows = summarize_dir(&input, confidence)?;
            write_summary_csv(&rows, std::io::stdout()).map_err(run_err)?;
            if let Some(path) = out {
                let file = std::fs::File::create(&path).with_context(|| path.display().to_string()).map_err(run_err)?;
                write_summary_csv(&rows, file).map_err(run_err)?;
            }
            Ok(())
        }
        Command::Preset { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(())
        }
        Command::Preset { name: Some(name) } => {
            let cfg = preset(&name)?;
            println!("{}", serde_json::to_string_pretty(&cfg).map_err(run_err)?);
            Ok(())
        }
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg: ScenarioConfig = match (&args.preset, &args.config) {
        (Some(name), _) => preset(name)?,
        (None, Some(path)) => ScenarioConfig::from_json_file(path)?,
        (None, None) => unreachable!("clap requires one of --preset and --config"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let scheme = match (&args.policy, &args.scheme) {
        (Some(p), _) => {
            let spec: PolicySpec = p.parse().map_err(config_err)?;
            cfg.policy = spec.clone();
            Scheme::Gossip(spec)
        }
        (None, Some(s)) => s.parse()?,
        (None, None) => Scheme::Gossip(cfg.policy.clone()),
    };
    cfg.validate()?;
    let out = args.out.unwrap_or_else(|| default_run_dir(&cfg, &scheme));
    let base = cfg.load_base_source()?;
    let outcome = run_scheme(&cfg, &base, &scheme, cfg.seed, args.record_messages)?;
    write_run(&outcome, &cfg.name, &out)?;
    let last = outcome.final_metrics().expect("a run has at least one round");
    println!(
        "{} {} seed {}: round {} acc {:.4} loss {:.4} objective {:.6} -> {}",
        cfg.name,
        scheme.label(),
        cfg.seed,
        last.round,
        last.mean_acc,
        last.mean_loss,
        last.objective,
        out.display()
    );
    Ok(())
}

fn default_run_dir(cfg: &ScenarioConfig, scheme: &Scheme) -> PathBuf {
    let root = output_root();
    info!("writing under {} (set {OUTPUT_DIR_ENV} to change)", root.display());
    Path::new(&root).join(&cfg.name).join(scheme.label()).join(format!("seed-{}", cfg.seed))
}
