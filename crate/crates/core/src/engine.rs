// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Chain orchestration: per-flow processing on simulated instances,
//! per-stage transaction graphs with stage barriers, epoch commit,
//! checkpoints and the redo log used by recovery.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::executor::{
    execute_batch, BatchControl, Emitted, ExecConfig, ExecContext, ExecError, ExecutorCaches, TxnOutcome, TxnStatus,
    UdfTable,
};
use crate::harness::codec::{decode_request, encode_request, CodecError};
use crate::job::ValidatedJob;
use crate::resilience::{self, FailureEvent, MigrationPlan, RecoveryReport, Reconfiguration};
use crate::scheduler::{
    select_strategy_with, Exploration, Granularity, HeuristicThresholds, ScheduleStrategy,
};
use crate::store::{Snapshot, StoreError, VersionedStore};
use crate::tpg::{make_seq, tpg_stats, DepKind, TpgError, TransactionRequest, TxnBatch};
use crate::value::FieldMap;
use crate::vnf::{build_vnf, PacketEvent, PerFlowAction, Vnf, VnfError};

/// Partial strategy override; unset parts come from the heuristic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StrategyChoice {
    pub exploration: Option<Exploration>,
    pub granularity: Option<Granularity>,
}

impl StrategyChoice {
    pub fn fixed(s: ScheduleStrategy) -> Self {
        StrategyChoice { exploration: Some(s.exploration), granularity: Some(s.granularity) }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub executors: usize,
    pub strategy: StrategyChoice,
    pub thresholds: HeuristicThresholds,
    pub exec: ExecConfig,
    /// Take a checkpoint every this many batches; 0 disables checkpoints.
    pub snapshot_interval: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            executors: 1,
            strategy: StrategyChoice::default(),
            thresholds: HeuristicThresholds::default(),
            exec: ExecConfig::default(),
            snapshot_interval: DEFAULT_SNAPSHOT_INTERVAL,
        }
    }
}

pub const DEFAULT_SNAPSHOT_INTERVAL: u64 = 4;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Vnf(#[from] VnfError),
    #[error(transparent)]
    Tpg(#[from] TpgError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("unknown VNF `{0}`")]
    UnknownVnf(String),
    #[error("VNF `{vnf}` has no instance {instance}")]
    UnknownInstance { vnf: String, instance: u32 },
    #[error("parallelism must be at least 1")]
    BadParallelism,
    #[error("replay of batch {0} diverged from its dependency log")]
    ReplayDiverged(u64),
}

/// What one VNF did with one packet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputRecord {
    pub batch: u64,
    pub event: u64,
    pub flow: String,
    pub vnf: String,
    pub emitted: Emitted,
    pub detail: String,
    /// Alarms and other notifications raised while handling the packet.
    pub notes: Vec<String>,
}

/// One transaction's entry in the dependency log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    pub seq: u64,
    pub vnf_id: String,
    pub instance_id: u32,
    pub txn_id: String,
    pub status: TxnStatus,
    pub reason: Option<String>,
    /// Parametric dependencies resolved inside the transaction, as
    /// `(from position, to position)`.
    pub pd_links: Vec<(u32, u32)>,
}

/// Per-batch record of every transaction's resolution.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DependencyLog {
    pub batch: u64,
    pub entries: Vec<LogEntry>,
}

impl DependencyLog {
    pub fn aborted(&self) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(|e| e.status == TxnStatus::Aborted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMetrics {
    pub batch: u64,
    pub stage: u32,
    pub strategy: Option<ScheduleStrategy>,
    pub executors: usize,
    pub txns: usize,
    pub commits: usize,
    pub aborts: usize,
    pub throughput_tps: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub cache_hit: f64,
    pub state_hash: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BatchReport {
    pub batch: u64,
    pub events: usize,
    pub stages: Vec<StageMetrics>,
    pub log: DependencyLog,
    pub recovery: Option<RecoveryReport>,
    pub reconfigurations: Vec<Reconfiguration>,
    pub reconfig_us: u64,
}

/// Input of one batch, kept until the next checkpoint for replay.
#[derive(Debug, Clone)]
pub(crate) struct BatchRecord {
    pub batch: u64,
    pub events: Vec<PacketEvent>,
    pub reconfig: Vec<Reconfiguration>,
    pub log: DependencyLog,
}

/// Everything needed to resume from a batch boundary.
#[derive(Debug, Clone)]
pub(crate) struct Checkpoint {
    pub snapshot: Snapshot,
    pub locals: BTreeMap<String, Vec<LocalState>>,
    pub overrides: BTreeMap<String, BTreeMap<String, u32>>,
    pub next_batch: u64,
    pub outputs_len: usize,
}

/// Per-flow records held in one instance's memory.
pub type LocalState = BTreeMap<String, FieldMap>;

pub(crate) enum RunStop {
    Completed(Box<BatchReport>),
    Interrupted,
}

pub struct Engine {
    pub(crate) job: Arc<ValidatedJob>,
    pub(crate) vnfs: BTreeMap<String, Arc<dyn Vnf>>,
    pub(crate) udfs: UdfTable,
    pub(crate) config: EngineConfig,
    pub(crate) store: VersionedStore,
    pub(crate) caches: ExecutorCaches,
    /// VNF → instance → flow id → record. Instance count is the VNF's
    /// current parallelism.
    pub(crate) locals: BTreeMap<String, Vec<LocalState>>,
    /// VNF → flow id → instance, overriding hash routing.
    pub(crate) overrides: BTreeMap<String, BTreeMap<String, u32>>,
    pub(crate) next_batch: u64,
    pub(crate) genesis: Checkpoint,
    pub(crate) checkpoint: Option<Checkpoint>,
    pub(crate) redo: Vec<BatchRecord>,
    /// `(batch, vnf, instance)` whose transactions are aborted on entry.
    pub(crate) exclusions: BTreeSet<(u64, String, u32)>,
    pub(crate) failures: Vec<FailureEvent>,
    pub(crate) scheduled: BTreeMap<u64, Vec<(String, u32)>>,
    /// Reconfigurations made since the last batch; replayed before it.
    pub(crate) pending_reconfig: Vec<Reconfiguration>,
    pub(crate) outputs: Vec<OutputRecord>,
    pub(crate) metrics: Vec<StageMetrics>,
}

impl Engine {
    /// Builds the VNFs named by the job, seeds their shared state at seq 0
    /// and records the genesis checkpoint.
    pub fn new(job: ValidatedJob, config: EngineConfig) -> Result<Self, EngineError> {
        let job = Arc::new(job);
        let mut vnfs = BTreeMap::new();
        let mut udfs = UdfTable::new();
        let mut locals = BTreeMap::new();
        let mut store = VersionedStore::for_job(&job);
        for def in &job.vnfs {
            let vnf = build_vnf(def, &job)?;
            if let Some(udf) = vnf.cross_flow() {
                udfs.insert(def.vnf_id.clone(), udf);
            }
            vnf.seed(&mut store)?;
            let k = job.parallelism_of(&def.vnf_id).unwrap_or(1).max(1);
            locals.insert(def.vnf_id.clone(), vec![LocalState::new(); k as usize]);
            vnfs.insert(def.vnf_id.clone(), vnf);
        }
        let genesis = Checkpoint {
            snapshot: store.export(0),
            locals: locals.clone(),
            overrides: BTreeMap::new(),
            next_batch: 1,
            outputs_len: 0,
        };
        Ok(Engine {
            job,
            vnfs,
            udfs,
            config,
            store,
            caches: ExecutorCaches::new(),
            locals,
            overrides: BTreeMap::new(),
            next_batch: 1,
            genesis,
            checkpoint: None,
            redo: Vec::new(),
            exclusions: BTreeSet::new(),
            failures: Vec::new(),
            scheduled: BTreeMap::new(),
            pending_reconfig: Vec::new(),
            outputs: Vec::new(),
            metrics: Vec::new(),
        })
    }

    pub fn job(&self) -> &ValidatedJob {
        &self.job
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &VersionedStore {
        &self.store
    }

    pub fn next_batch(&self) -> u64 {
        self.next_batch
    }

    pub fn outputs(&self) -> &[OutputRecord] {
        &self.outputs
    }

    pub fn metrics(&self) -> &[StageMetrics] {
        &self.metrics
    }

    /// Committed shared state.
    pub fn snapshot(&self) -> Snapshot {
        self.store.export(self.next_batch.saturating_sub(1))
    }

    pub fn parallelism(&self, vnf: &str) -> Option<u32> {
        self.locals.get(vnf).map(|l| l.len() as u32)
    }

    /// Per-flow records of one instance.
    pub fn local_state(&self, vnf: &str, instance: u32) -> Option<&LocalState> {
        self.locals.get(vnf).and_then(|l| l.get(instance as usize))
    }

    /// Per-flow records of a VNF across all instances, by flow id.
    pub fn flow_states(&self, vnf: &str) -> BTreeMap<String, FieldMap> {
        self.locals
            .get(vnf)
            .into_iter()
            .flatten()
            .flat_map(|inst| inst.iter().map(|(f, r)| (f.clone(), r.clone())))
            .collect()
    }

    /// Output records per flow, in processing order.
    pub fn outputs_by_flow(&self) -> BTreeMap<String, Vec<OutputRecord>> {
        let mut out: BTreeMap<String, Vec<OutputRecord>> = BTreeMap::new();
        for r in &self.outputs {
            out.entry(r.flow.clone()).or_default().push(r.clone());
        }
        out
    }

    /// Every notification raised so far, in output order.
    pub fn notifications(&self) -> Vec<String> {
        self.outputs.iter().flat_map(|o| o.notes.iter().cloned()).collect()
    }

    /// Instance that owns `flow` at `vnf`.
    pub fn route(&self, vnf: &str, flow: &str) -> u32 {
        if let Some(&i) = self.overrides.get(vnf).and_then(|o| o.get(flow)) {
            return i;
        }
        let k = self.locals.get(vnf).map(|l| l.len()).unwrap_or(1).max(1);
        resilience::hash_route(flow, k as u32)
    }

    /// Aborts, on entry, every transaction that `instance` of `vnf` issues
    /// in `batch`. Used to build the filtered oracle of a failure run.
    pub fn exclude(&mut self, batch: u64, vnf: &str, instance: u32) {
        self.exclusions.insert((batch, vnf.to_owned(), instance));
    }

    /// Schedules an instance failure. The instance must exist now.
    pub fn inject_failure(&mut self, event: FailureEvent) -> Result<(), EngineError> {
        let k = self.parallelism(&event.vnf_id).ok_or_else(|| EngineError::UnknownVnf(event.vnf_id.clone()))?;
        if event.instance_id >= k {
            return Err(EngineError::UnknownInstance { vnf: event.vnf_id, instance: event.instance_id });
        }
        self.failures.push(event);
        Ok(())
    }

    /// Schedules a rescale of `vnf` to `parallelism` before batch `at_batch`.
    pub fn schedule_scale(&mut self, vnf: &str, parallelism: u32, at_batch: u64) -> Result<(), EngineError> {
        if !self.locals.contains_key(vnf) {
            return Err(EngineError::UnknownVnf(vnf.to_owned()));
        }
        if parallelism == 0 {
            return Err(EngineError::BadParallelism);
        }
        self.scheduled.entry(at_batch).or_default().push((vnf.to_owned(), parallelism));
        Ok(())
    }

    /// Processes one batch through every stage and commits it.
    pub fn process_batch(&mut self, events: Vec<PacketEvent>) -> Result<BatchReport, EngineError> {
        let batch = self.next_batch;
        let mut recovery = None;
        // boundary failures first: recovery rolls back, so reconfigurations
        // made for this batch must come after it
        let boundary: Vec<FailureEvent> =
            self.failures.iter().filter(|f| f.at_batch == batch && f.after_ops.is_none()).cloned().collect();
        for f in &boundary {
            recovery = Some(resilience::recover(f, self, None)?);
        }

        let started = Instant::now();
        let mut reconfig = std::mem::take(&mut self.pending_reconfig);
        for (vnf, k) in self.scheduled.remove(&batch).unwrap_or_default() {
            let plan = resilience::plan_migration(self, &vnf, k)?;
            resilience::execute_migration(&plan, self)?;
            reconfig.push(Reconfiguration::Migrate(plan));
        }
        let reconfig_us = started.elapsed().as_micros() as u64;

        let mid = self.failures.iter().find(|f| f.at_batch == batch && f.after_ops.is_some()).cloned();
        let halt = match &mid {
            Some(f) => {
                let stage = self.job.stage_of(&f.vnf_id).ok_or_else(|| EngineError::UnknownVnf(f.vnf_id.clone()))?;
                Some((stage, f.after_ops.unwrap_or(0)))
            }
            None => None,
        };
        self.failures.retain(|f| f.at_batch != batch);

        let mut report = match self.run_batch(batch, &events, halt)? {
            RunStop::Completed(r) => *r,
            RunStop::Interrupted => {
                let f = mid.clone().expect("only an injected failure halts a batch");
                let mut rec = resilience::recover(&f, self, Some((&events, &reconfig)))?;
                let r = match self.run_batch(batch, &events, None)? {
                    RunStop::Completed(r) => *r,
                    RunStop::Interrupted => unreachable!("no halt requested"),
                };
                rec.aborted_seqs = r
                    .log
                    .aborted()
                    .filter(|e| e.reason.as_deref() == Some(resilience::FAILED_INSTANCE_REASON))
                    .map(|e| e.seq)
                    .collect();
                rec.aborted_txns = rec.aborted_seqs.len();
                recovery = Some(rec);
                r
            }
        };
        report.reconfigurations = reconfig.clone();
        report.reconfig_us = reconfig_us;
        let late = mid.filter(|_| recovery.as_ref().is_none_or(|r| !r.interrupted));
        self.finish_batch(batch, events, reconfig, &report);
        if let Some(f) = late {
            // the failed stage finished before the failure point: nothing was
            // in flight, so this is a boundary failure after the batch
            recovery = Some(resilience::recover(&f, self, None)?);
        }
        report.recovery = recovery;
        Ok(report)
    }

    /// Hands the flows of a slow instance to `backup` before the next batch.
    pub fn mitigate_straggler(&mut self, vnf: &str, straggler: u32, backup: u32) -> Result<Vec<String>, EngineError> {
        let moved = resilience::clone_to_backup(self, vnf, straggler, backup)?;
        self.pending_reconfig.push(Reconfiguration::Clone(resilience::CloneSpec {
            vnf_id: vnf.to_owned(),
            straggler,
            backup,
        }));
        Ok(moved)
    }

    /// Rescales `vnf` now, between batches.
    pub fn scale(&mut self, vnf: &str, parallelism: u32) -> Result<MigrationPlan, EngineError> {
        let plan = resilience::plan_migration(self, vnf, parallelism)?;
        resilience::execute_migration(&plan, self)?;
        self.pending_reconfig.push(Reconfiguration::Migrate(plan.clone()));
        Ok(plan)
    }

    pub(crate) fn finish_batch(
        &mut self,
        batch: u64,
        events: Vec<PacketEvent>,
        reconfig: Vec<Reconfiguration>,
        report: &BatchReport,
    ) {
        self.metrics.extend(report.stages.iter().cloned());
        self.redo.push(BatchRecord { batch, events, reconfig, log: report.log.clone() });
        self.next_batch = batch + 1;
        if self.config.snapshot_interval > 0 && batch.is_multiple_of(self.config.snapshot_interval) {
            self.take_checkpoint(batch);
        }
    }

    fn take_checkpoint(&mut self, batch: u64) {
        let snapshot = self.store.take_snapshot(batch).expect("no epoch is open between batches");
        if let Some(old) = self.checkpoint.take() {
            self.store.release_snapshot(old.snapshot.epoch);
        }
        let _ = self.store.gc(snapshot.high_seq);
        self.checkpoint = Some(Checkpoint {
            snapshot,
            locals: self.locals.clone(),
            overrides: self.overrides.clone(),
            next_batch: batch + 1,
            outputs_len: self.outputs.len(),
        });
        self.redo.clear();
    }

    fn choose_strategy(&self, profile: &crate::scheduler::WorkloadProfile) -> ScheduleStrategy {
        let auto = select_strategy_with(profile, None, &self.config.thresholds);
        ScheduleStrategy::new(
            self.config.strategy.exploration.unwrap_or(auto.exploration),
            self.config.strategy.granularity.unwrap_or(auto.granularity),
        )
    }

    /// Runs all stages of one batch. `halt` interrupts execution of the
    /// given stage after that many ops; the stage is then discarded.
    pub(crate) fn run_batch(
        &mut self,
        batch: u64,
        events: &[PacketEvent],
        halt: Option<(u32, usize)>,
    ) -> Result<RunStop, EngineError> {
        let job = Arc::clone(&self.job);
        let root: Vec<String> = job.vnfs_at_stage(1).iter().map(|v| v.vnf_id.clone()).collect();
        let mut arrivals: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for r in root {
            arrivals.insert(r, (0..events.len()).collect());
        }
        let mut report = BatchReport { batch, events: events.len(), ..Default::default() };
        let mut next_index: u32 = 0;
        let mut new_outputs: Vec<OutputRecord> = Vec::new();

        for stage in 1..=job.max_stage() {
            let stage_vnfs: Vec<String> = job.vnfs_at_stage(stage).iter().map(|v| v.vnf_id.clone()).collect();
            let mut tx_batch = TxnBatch::new(stage);
            // request order: (vnf, event index, instance)
            let mut pending: Vec<(String, usize, u32)> = Vec::new();
            let mut pre_aborted = BTreeMap::new();
            let mut forwarded: Vec<(String, usize)> = Vec::new();

            for vnf_id in &stage_vnfs {
                let vnf = Arc::clone(&self.vnfs[vnf_id]);
                for &ei in arrivals.get(vnf_id).map(Vec::as_slice).unwrap_or(&[]) {
                    let event = &events[ei];
                    let flow = event.flow.id();
                    let instance = self.route(vnf_id, &flow);
                    let local = self.local_mut(vnf_id, instance, &flow);
                    match vnf.per_flow(event, local) {
                        PerFlowAction::Forward(detail) => {
                            new_outputs.push(output(batch, event, vnf_id, Emitted::Forward, detail, Vec::new()));
                            forwarded.push((vnf_id.clone(), ei));
                        }
                        PerFlowAction::Drop(detail) => {
                            new_outputs.push(output(batch, event, vnf_id, Emitted::Drop, detail, Vec::new()));
                        }
                        PerFlowAction::Transact(call) => {
                            let seq = make_seq(batch, next_index);
                            next_index += 1;
                            let req = TransactionRequest {
                                seq,
                                vnf_id: vnf_id.clone(),
                                instance_id: instance,
                                txn_id: call.txn_id,
                                packet_data: call.packet_data,
                                target_keys: call.target_keys,
                            };
                            let wire = encode_request(&job, &req)?;
                            let req = decode_request(&job, &wire)?;
                            if self.exclusions.contains(&(batch, vnf_id.clone(), instance)) {
                                pre_aborted.insert(seq, resilience::FAILED_INSTANCE_REASON.to_owned());
                            }
                            tx_batch.enqueue_request(&job, req)?;
                            pending.push((vnf_id.clone(), ei, instance));
                        }
                    }
                }
            }

            let mut metrics = StageMetrics {
                batch,
                stage,
                strategy: None,
                executors: self.config.executors,
                txns: pending.len(),
                commits: 0,
                aborts: 0,
                throughput_tps: 0.0,
                p50_us: 0.0,
                p99_us: 0.0,
                cache_hit: 0.0,
                state_hash: String::new(),
            };
            if !tx_batch.is_empty() {
                let tpg = tx_batch.build()?;
                let strategy = self.choose_strategy(&tpg_stats(&tpg));
                let control = BatchControl {
                    epoch: batch,
                    pre_aborted,
                    halt_after_ops: halt.filter(|(s, _)| *s == stage).map(|(_, n)| n),
                    probe_every: None,
                };
                let ctx = ExecContext { job: &job, udfs: &self.udfs, config: &self.config.exec };
                let started = Instant::now();
                let result = execute_batch(
                    &tpg,
                    strategy,
                    self.config.executors,
                    &mut self.store,
                    &ctx,
                    Some(&mut self.caches),
                    &control,
                )?;
                let wall = started.elapsed().as_secs_f64();
                if result.interrupted {
                    return Ok(RunStop::Interrupted);
                }
                metrics.strategy = Some(strategy);
                metrics.commits = result.committed();
                metrics.aborts = result.aborted();
                metrics.throughput_tps = if wall > 0.0 { pending.len() as f64 / wall } else { 0.0 };
                metrics.p50_us = result.metrics.latency_percentile_us(50.0);
                metrics.p99_us = result.metrics.latency_percentile_us(99.0);
                metrics.cache_hit = result.metrics.cache_hit_ratio();

                for (txn, ((vnf_id, ei, instance), outcome)) in pending.iter().zip(&result.outcomes).enumerate() {
                    let event = &events[*ei];
                    let flow = event.flow.id();
                    let vnf = Arc::clone(&self.vnfs[vnf_id]);
                    let local = self.local_mut(vnf_id, *instance, &flow);
                    let detail = vnf.on_outcome(event, outcome, local);
                    let emitted = outcome.emitted();
                    new_outputs.push(output(batch, event, vnf_id, emitted, detail, outcome.notifications.clone()));
                    if emitted == Emitted::Forward {
                        forwarded.push((vnf_id.clone(), *ei));
                    }
                    report.log.entries.push(log_entry(outcome, &tpg, txn as u32));
                }
            }
            metrics.state_hash = self.store.export(batch).state_hash();
            report.stages.push(metrics);

            for (vnf_id, ei) in forwarded {
                for child in job.children_of(&vnf_id) {
                    arrivals.entry(child.to_owned()).or_default().push(ei);
                }
            }
            for list in arrivals.values_mut() {
                list.sort_unstable();
                list.dedup();
            }
        }
        report.log.batch = batch;
        self.outputs.extend(new_outputs);
        Ok(RunStop::Completed(Box::new(report)))
    }

    fn local_mut(&mut self, vnf: &str, instance: u32, flow: &str) -> &mut FieldMap {
        self.locals
            .get_mut(vnf)
            .and_then(|l| l.get_mut(instance as usize))
            .expect("routing stays within the VNF's instances")
            .entry(flow.to_owned())
            .or_default()
    }

    /// Rolls back to `cp`.
    pub(crate) fn restore(&mut self, cp: &Checkpoint) -> Result<(), EngineError> {
        self.store.restore_snapshot(&cp.snapshot)?;
        self.caches.clear();
        self.locals = cp.locals.clone();
        self.overrides = cp.overrides.clone();
        self.next_batch = cp.next_batch;
        self.outputs.truncate(cp.outputs_len);
        self.metrics.retain(|m| m.batch < cp.next_batch);
        Ok(())
    }

    pub(crate) fn apply(&mut self, r: &Reconfiguration) -> Result<(), EngineError> {
        match r {
            Reconfiguration::Migrate(plan) => resilience::execute_migration(plan, self),
            Reconfiguration::Clone(c) => resilience::clone_to_backup(self, &c.vnf_id, c.straggler, c.backup).map(|_| ()),
        }
    }

    /// Flow id → instance currently holding its record.
    pub(crate) fn live_flows(&self, vnf: &str) -> Result<BTreeMap<String, u32>, EngineError> {
        let l = self.locals.get(vnf).ok_or_else(|| EngineError::UnknownVnf(vnf.to_owned()))?;
        Ok(l.iter()
            .enumerate()
            .flat_map(|(i, inst)| inst.keys().map(move |f| (f.clone(), i as u32)))
            .collect())
    }
}

fn output(batch: u64, event: &PacketEvent, vnf: &str, emitted: Emitted, detail: String, notes: Vec<String>) -> OutputRecord {
    OutputRecord { batch, event: event.id, flow: event.flow.id(), vnf: vnf.to_owned(), emitted, detail, notes }
}

fn log_entry(outcome: &TxnOutcome, tpg: &crate::tpg::Tpg, txn: u32) -> LogEntry {
    let ops = tpg.txn_ops(txn);
    let pd_links = tpg
        .edges_of(DepKind::PD)
        .filter(|e| ops.contains(&e.to))
        .map(|e| (tpg.node(e.from).position, tpg.node(e.to).position))
        .collect();
    LogEntry {
        seq: outcome.seq,
        vnf_id: outcome.vnf_id.clone(),
        instance_id: outcome.instance_id,
        txn_id: outcome.txn_id.clone(),
        status: outcome.status,
        reason: outcome.reason.clone(),
        pd_links,
    }
}
