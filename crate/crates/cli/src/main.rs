//! `sagt`: command-line front end for the node-classification pipeline.
//!
//! Exit codes: 0 on success, 1 for invalid input (flags, config, dataset
//! files), 2 when a stage fails while computing.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sagt_core::dataset::load_dataset;
use sagt_core::enrich::ClassRepSource;
use sagt_core::metrics::dataset_metrics;
use sagt_core::pipeline::{evaluate_run, run_pipeline, RunOptions, RunResult, Stage};
use sagt_core::{Error, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "sagt", version, about = "Structure-aware graph transformer for node classification")]
struct Cli {
    /// Random seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration (a provenance.json is accepted too).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reuse artifacts of stages whose inputs are unchanged.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Structural statistics of a dataset.
    Metrics {
        /// Dataset directory; defaults to `dataset` in the config.
        dataset: Option<PathBuf>,
    },
    /// Splits, GCN amplification and feature enrichment.
    Preprocess {
        /// Dataset directory; defaults to `dataset` in the config.
        dataset: Option<PathBuf>,
        #[command(flatten)]
        enrich: EnrichFlags,
    },
    /// PPR sampling matrix and subgraph sequences.
    Sample {
        /// Dataset directory; defaults to `dataset` in the config.
        dataset: Option<PathBuf>,
        #[command(flatten)]
        sampling: SamplingFlags,
    },
    /// Full pipeline through evaluation.
    Train {
        /// Dataset directory; defaults to `dataset` in the config.
        dataset: Option<PathBuf>,
        #[command(flatten)]
        enrich: EnrichFlags,
        #[command(flatten)]
        sampling: SamplingFlags,
        /// Write per-node target-token embeddings to embeddings.txt.
        #[arg(long)]
        emit_embeddings: bool,
        /// Run once per seed into `<out>/seed-<s>` and summarize.
        #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
        seeds: Option<Vec<u64>>,
    },
    /// Recompute accuracies of a finished run from its checkpoint.
    Eval {
        /// Directory written by `train`.
        run_dir: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct EnrichFlags {
    /// Nodes whose labels define the class representatives.
    #[arg(long, value_enum)]
    class_reps: Option<RepsArg>,
    /// Divide the degree offset by the maximum degree.
    #[arg(long)]
    deg_norm: bool,
}

#[derive(Args, Debug, Default)]
struct SamplingFlags {
    /// PPR restart probability.
    #[arg(long)]
    c: Option<f64>,
    /// Context nodes per sequence.
    #[arg(long)]
    k1: Option<usize>,
    /// Sequences per node.
    #[arg(long)]
    q: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RepsArg {
    Train,
    All,
}

/// Error plus the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_validation() { 1 } else { 2 };
        let mut msg = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            msg.push_str(&format!(": {s}"));
            src = s.source();
        }
        Failure { code, msg }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) if !p.is_file() => return Err(invalid(format!("config file {} does not exist", p.display()))),
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dataset_dir(arg: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = arg
        .clone()
        .or_else(|| cfg.dataset.clone())
        .ok_or_else(|| invalid("no dataset directory given (positional argument or `dataset` in the config)"))?;
    if !dir.join("meta.json").is_file() {
        return Err(invalid(format!("{} is not a dataset directory (no meta.json)", dir.display())));
    }
    Ok(dir)
}

fn apply_enrich(cfg: &mut RunConfig, f: &EnrichFlags) {
    if let Some(r) = f.class_reps {
        cfg.class_reps = match r {
            RepsArg::Train => ClassRepSource::Train,
            RepsArg::All => ClassRepSource::All,
        };
    }
    if f.deg_norm {
        cfg.deg_norm = true;
    }
}

fn apply_sampling(cfg: &mut RunConfig, f: &SamplingFlags) {
    if let Some(c) = f.c {
        cfg.c = c;
    }
    if let Some(k1) = f.k1 {
        cfg.model.k1 = k1;
    }
    if let Some(q) = f.q {
        cfg.model.q = q;
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::from(Error::from(e)))?;
    println!("{text}");
    Ok(())
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("sagt-run"))
}

fn run_stage(cfg: &RunConfig, dataset: &Path, out: PathBuf, resume: bool, target: Stage, emit: bool) -> Result<sagt_core::pipeline::RunOutcome, Failure> {
    cfg.validate()?;
    let opts = RunOptions {
        dataset: dataset.to_path_buf(),
        out,
        resume,
        emit_embeddings: emit,
        target,
    };
    let outcome = run_pipeline(cfg, &opts)?;
    for s in &outcome.reused {
        log::info!("reused {}", s.name());
    }
    Ok(outcome)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = base_config(&cli)?;
    match &cli.command {
        Command::Metrics { dataset } => {
            let dir = dataset_dir(dataset, &cfg)?;
            let metrics = match &cli.out {
                Some(out) => run_stage(&cfg, &dir, out.clone(), cli.resume, Stage::Metrics, false)?
                    .metrics
                    .expect("metrics stage reports metrics"),
                None => dataset_metrics(&load_dataset(&dir)?.graph),
            };
            print_json(&metrics)
        }
        Command::Preprocess { dataset, enrich } => {
            apply_enrich(&mut cfg, enrich);
            let dir = dataset_dir(dataset, &cfg)?;
            let out = out_dir(&cli);
            run_stage(&cfg, &dir, out.clone(), cli.resume, Stage::Preprocess, false)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Sample { dataset, sampling } => {
            apply_sampling(&mut cfg, sampling);
            let dir = dataset_dir(dataset, &cfg)?;
            let out = out_dir(&cli);
            run_stage(&cfg, &dir, out.clone(), cli.resume, Stage::Sample, false)?;
            println!("{}", out.join("subgraphs.txt").display());
            Ok(())
        }
        Command::Train {
            dataset,
            enrich,
            sampling,
            emit_embeddings,
            seeds,
        } => {
            apply_enrich(&mut cfg, enrich);
            apply_sampling(&mut cfg, sampling);
            let dir = dataset_dir(dataset, &cfg)?;
            let out = out_dir(&cli);
            let Some(seeds) = seeds else {
                let outcome = run_stage(&cfg, &dir, out, cli.resume, Stage::Eval, *emit_embeddings)?;
                return print_json(&outcome.result.expect("eval stage reports a result"));
            };
            if seeds.is_empty() {
                return Err(invalid("--seeds needs at least one value"));
            }
            let mut results: Vec<RunResult> = Vec::new();
            for &s in seeds {
                cfg.seed = s;
                let outcome = run_stage(&cfg, &dir, out.join(format!("seed-{s}")), cli.resume, Stage::Eval, *emit_embeddings)?;
                results.push(outcome.result.expect("eval stage reports a result"));
            }
            let acc: Vec<f64> = results.iter().map(|r| r.test_accuracy).collect();
            let mean = acc.iter().sum::<f64>() / acc.len() as f64;
            let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / acc.len() as f64;
            print_json(&serde_json::json!({
                "seeds": seeds,
                "test_accuracy": acc,
                "mean": mean,
                "std": var.sqrt(),
            }))
        }
        Command::Eval { run_dir } => {
            if !run_dir.join("provenance.json").is_file() {
                return Err(invalid(format!("{} has no provenance.json", run_dir.display())));
            }
            print_json(&evaluate_run(run_dir)?)
        }
    }
}
