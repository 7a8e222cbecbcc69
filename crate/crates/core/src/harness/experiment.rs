// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::metrics_csv;
use super::traffic::{generate_traffic, split_batches, TrafficSpec};
use crate::engine::{BatchReport, Engine, EngineConfig, EngineError, OutputRecord, StageMetrics, StrategyChoice};
use crate::job::ValidatedJob;
use crate::resilience::{FailureEvent, RecoveryReport};
use crate::scheduler::{Exploration, Granularity, ScheduleStrategy};
use crate::store::Snapshot;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleEvent {
    pub vnf_id: String,
    pub to: u32,
    pub at_batch: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentConfig {
    pub engine: EngineConfig,
    pub failures: Vec<FailureEvent>,
    pub scales: Vec<ScaleEvent>,
}

pub struct RunOutput {
    pub batches: Vec<BatchReport>,
    pub metrics: Vec<StageMetrics>,
    pub snapshot: Snapshot,
    pub outputs: Vec<OutputRecord>,
    pub recoveries: Vec<RecoveryReport>,
    /// The engine after the last batch, for inspecting per-flow state.
    pub engine: Engine,
}

/// Generates the traffic, cuts it into batches and pushes every batch
/// through a fresh engine.
pub fn run_experiment(
    job: &ValidatedJob,
    traffic: &TrafficSpec,
    cfg: &ExperimentConfig,
) -> Result<RunOutput, EngineError> {
    let mut engine = Engine::new(job.clone(), cfg.engine.clone())?;
    for f in &cfg.failures {
        engine.inject_failure(f.clone())?;
    }
    for s in &cfg.scales {
        engine.schedule_scale(&s.vnf_id, s.to, s.at_batch)?;
    }
    let mut batches = Vec::new();
    for events in split_batches(traffic, generate_traffic(traffic)) {
        batches.push(engine.process_batch(events)?);
    }
    let recoveries = batches.iter().filter_map(|b| b.recovery.clone()).collect();
    Ok(RunOutput {
        metrics: engine.metrics().to_vec(),
        snapshot: engine.snapshot(),
        outputs: engine.outputs().to_vec(),
        batches,
        recoveries,
        engine,
    })
}

/// Writes `metrics.csv`, `snapshot.json`, `report.json` and `outputs.json`.
pub fn write_run(out: &RunOutput, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(&out.metrics))?;
    fs::write(dir.join("snapshot.json"), out.snapshot.to_json())?;
    fs::write(dir.join("report.json"), pretty(&out.batches))?;
    fs::write(dir.join("outputs.json"), pretty(&out.outputs))?;
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

#[derive(Debug, Clone)]
pub struct BenchMatrix {
    pub explorations: Vec<Exploration>,
    pub granularities: Vec<Granularity>,
    pub executors: Vec<usize>,
    pub thetas: Vec<f64>,
    pub traffic: TrafficSpec,
    pub base: EngineConfig,
}

impl Default for BenchMatrix {
    fn default() -> Self {
        BenchMatrix {
            explorations: vec![Exploration::Bfs, Exploration::Dfs, Exploration::NonStructured],
            granularities: vec![Granularity::Fine, Granularity::Grouped],
            executors: vec![1, 4],
            thetas: vec![0.0, 0.6, 1.2],
            traffic: TrafficSpec {
                total_events: 10_000,
                batch_size: 1_000,
                key_count: 100,
                flow_count: 1_000,
                ..Default::default()
            },
            base: EngineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchCell {
    pub theta: f64,
    pub strategy: ScheduleStrategy,
    pub executors: usize,
}

impl BenchMatrix {
    /// Cells in row order: theta, then exploration, granularity, executors.
    pub fn cells(&self) -> Vec<BenchCell> {
        let mut out = Vec::new();
        for &theta in &self.thetas {
            for &e in &self.explorations {
                for &g in &self.granularities {
                    for &executors in &self.executors {
                        out.push(BenchCell { theta, strategy: ScheduleStrategy::new(e, g), executors });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub cell: BenchCell,
    pub batches: usize,
    pub txns: usize,
    pub commits: usize,
    pub aborts: usize,
    /// Transactions over summed stage wall time.
    pub throughput_tps: f64,
    /// Median of the per-stage medians.
    pub p50_us: f64,
    /// Worst per-stage p99.
    pub p99_us: f64,
    /// Transaction-weighted mean of per-stage hit ratios.
    pub cache_hit: f64,
    pub state_hash: String,
}

pub const BENCH_COLUMNS: &str =
    "theta,strategy,granularity,executors,batches,txns,commits,aborts,throughput_tps,p50_us,p99_us,cache_hit,state_hash";

/// Runs every cell of the matrix on the same job and traffic.
pub fn bench(job: &ValidatedJob, matrix: &BenchMatrix) -> Result<Vec<BenchRow>, EngineError> {
    let mut rows = Vec::new();
    for cell in matrix.cells() {
        let traffic = TrafficSpec { zipf_theta: cell.theta, ..matrix.traffic.clone() };
        let engine = EngineConfig {
            executors: cell.executors,
            strategy: StrategyChoice::fixed(cell.strategy),
            ..matrix.base.clone()
        };
        let run = run_experiment(job, &traffic, &ExperimentConfig { engine, ..Default::default() })?;
        let stages: Vec<&StageMetrics> = run.metrics.iter().filter(|m| m.txns > 0).collect();
        let txns: usize = stages.iter().map(|m| m.txns).sum();
        let wall: f64 = stages.iter().filter(|m| m.throughput_tps > 0.0).map(|m| m.txns as f64 / m.throughput_tps).sum();
        let mut p50s: Vec<f64> = stages.iter().map(|m| m.p50_us).collect();
        p50s.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            cell,
            batches: run.batches.len(),
            txns,
            commits: stages.iter().map(|m| m.commits).sum(),
            aborts: stages.iter().map(|m| m.aborts).sum(),
            throughput_tps: if wall > 0.0 { txns as f64 / wall } else { 0.0 },
            p50_us: p50s.get(p50s.len() / 2).copied().unwrap_or(0.0),
            p99_us: stages.iter().map(|m| m.p99_us).fold(0.0, f64::max),
            cache_hit: if txns > 0 {
                stages.iter().map(|m| m.cache_hit * m.txns as f64).sum::<f64>() / txns as f64
            } else {
                0.0
            },
            state_hash: run.snapshot.state_hash(),
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_COLUMNS);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.1},{:.3},{:.3},{:.4},{}",
            r.cell.theta,
            r.cell.strategy.exploration,
            r.cell.strategy.granularity,
            r.cell.executors,
            r.batches,
            r.txns,
            r.commits,
            r.aborts,
            r.throughput_tps,
            r.p50_us,
            r.p99_us,
            r.cache_hit,
            r.state_hash
        )
        .expect("writing to a String");
    }
    out
}
