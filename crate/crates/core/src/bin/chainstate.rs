// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use chainstate::engine::{EngineConfig, EngineError, StrategyChoice};
use chainstate::executor::ExecConfig;
use chainstate::harness::traffic::TrafficSpec;
use chainstate::harness::{bench, bench_csv, run_experiment, write_run, BenchMatrix, ExperimentConfig, ScaleEvent};
use chainstate::job::ValidatedJob;
use chainstate::resilience::{FailureEvent, Reconfiguration};
use chainstate::scheduler::{Exploration, Granularity};
use chainstate::vnf::kv_job;

#[derive(Parser)]
#[command(name = "chainstate", version, about = "Transactional state engine for service function chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a job over generated traffic and write metrics and a snapshot.
    Run(RunArgs),
    /// Run a strategy × granularity × executors × skew matrix.
    Bench(BenchArgs),
    /// Run with an instance failure injected.
    Inject {
        #[command(flatten)]
        run: RunArgs,
        /// Failed instance as `vnf:instance`.
        #[arg(long)]
        fail: String,
        #[arg(long)]
        at_batch: u64,
        /// Fail mid-batch after this many ops of the VNF's stage.
        #[arg(long)]
        after_ops: Option<usize>,
    },
    /// Run with a VNF rescaled at a batch boundary.
    Scale {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        vnf: String,
        #[arg(long)]
        to: u32,
        #[arg(long)]
        at_batch: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Auto,
    Bfs,
    Dfs,
    Ns,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Fine,
    Grouped,
}

#[derive(Args)]
struct RunArgs {
    /// Job document (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Traffic spec (JSON); defaults apply to missing fields.
    #[arg(long)]
    traffic: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    executors: usize,
    #[arg(long, value_enum, default_value = "auto")]
    strategy: StrategyArg,
    /// Defaults to the heuristic's choice.
    #[arg(long, value_enum)]
    granularity: Option<GranularityArg>,
    /// Overrides the traffic seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = chainstate::engine::DEFAULT_SNAPSHOT_INTERVAL)]
    snapshot_interval: u64,
    #[arg(long)]
    no_cache: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Job document; the synthetic key-value job when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    traffic: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,4")]
    executors: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.6,1.2")]
    thetas: Vec<f64>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Vnf(_)
            | EngineError::UnknownVnf(_)
            | EngineError::UnknownInstance { .. }
            | EngineError::BadParallelism => {
                Failure::Validation(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn load_job(path: &Path) -> Result<ValidatedJob, Failure> {
    ValidatedJob::from_json(&read(path)?).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn load_traffic(path: Option<&Path>) -> Result<TrafficSpec, Failure> {
    match path {
        None => Ok(TrafficSpec::default()),
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Failure::Validation(format!("{}: {e}", p.display()))),
    }
}

fn experiment(args: &RunArgs) -> Result<(ValidatedJob, TrafficSpec, ExperimentConfig), Failure> {
    let job = load_job(&args.config)?;
    let mut traffic = load_traffic(args.traffic.as_deref())?;
    if let Some(seed) = args.seed {
        traffic.seed = seed;
    }
    let exploration = match args.strategy {
        StrategyArg::Auto => None,
        StrategyArg::Bfs => Some(Exploration::Bfs),
        StrategyArg::Dfs => Some(Exploration::Dfs),
        StrategyArg::Ns => Some(Exploration::NonStructured),
    };
    let granularity = args.granularity.map(|g| match g {
        GranularityArg::Fine => Granularity::Fine,
        GranularityArg::Grouped => Granularity::Grouped,
    });
    let engine = EngineConfig {
        executors: args.executors.max(1),
        strategy: StrategyChoice { exploration, granularity },
        exec: ExecConfig { cache_enabled: !args.no_cache, ..Default::default() },
        snapshot_interval: args.snapshot_interval,
        ..Default::default()
    };
    Ok((job, traffic, ExperimentConfig { engine, ..Default::default() }))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => {
            let (job, traffic, cfg) = experiment(&args)?;
            let run = run_experiment(&job, &traffic, &cfg)?;
            write_run(&run, &args.out)?;
            println!("{} batches, state hash {}", run.batches.len(), run.snapshot.state_hash());
        }
        Command::Bench(args) => {
            let job = match &args.config {
                Some(p) => load_job(p)?,
                None => kv_job(serde_json::json!({"seed_keys": 100, "initial_balance": 1000})),
            };
            let defaults = BenchMatrix::default();
            let traffic = match &args.traffic {
                Some(p) => load_traffic(Some(p))?,
                None => defaults.traffic.clone(),
            };
            let matrix = BenchMatrix { executors: args.executors, thetas: args.thetas, traffic, ..defaults };
            let csv = bench_csv(&bench(&job, &matrix)?);
            match &args.out {
                Some(p) => fs::write(p, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Inject { run: args, fail, at_batch, after_ops } => {
            let (vnf_id, instance) = fail
                .rsplit_once(':')
                .and_then(|(v, i)| Some((v.to_owned(), i.parse::<u32>().ok()?)))
                .ok_or_else(|| Failure::Validation(format!("--fail expects vnf:instance, got `{fail}`")))?;
            let (job, traffic, mut cfg) = experiment(&args)?;
            cfg.failures.push(FailureEvent { vnf_id, instance_id: instance, at_batch, after_ops });
            let run = run_experiment(&job, &traffic, &cfg)?;
            write_run(&run, &args.out)?;
            for r in &run.recoveries {
                println!("{}", r.to_json());
            }
        }
        Command::Scale { run: args, vnf, to, at_batch } => {
            let (job, traffic, mut cfg) = experiment(&args)?;
            cfg.scales.push(ScaleEvent { vnf_id: vnf, to, at_batch });
            let run = run_experiment(&job, &traffic, &cfg)?;
            write_run(&run, &args.out)?;
            for b in &run.batches {
                for r in &b.reconfigurations {
                    if let Reconfiguration::Migrate(plan) = r {
                        let summary = serde_json::json!({
                            "batch": b.batch,
                            "vnf_id": plan.vnf_id,
                            "old_parallelism": plan.old_parallelism,
                            "new_parallelism": plan.new_parallelism,
                            "live_flows": plan.reassignment.len(),
                            "transferred": plan.transfers.len(),
                            "duration_us": b.reconfig_us,
                        });
                        println!("{summary}");
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
