// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Parallel execution of a task precedence graph.
//!
//! Each of the `E` workers drains its own assignment slice strictly in
//! sequence, running an op only once all of its predecessors are done.
//! Reads at a transaction's sequence number go to a batch-local overlay of
//! already-committed writes and fall back to the versioned store. A
//! transaction's cross-flow UDF runs when its last op is reached; its writes
//! are published to the overlay as one unit and installed in the store at
//! commit.

mod holder;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

pub use holder::{run_cross_flow_udf, CrossFlowUdf, DataHolder, HolderOutput, UdfError};

use crate::job::{AccessKind, ValidatedJob};
use crate::scheduler::{assign_work, Dispatcher, ScheduleStrategy, WorkAssignment};
use crate::store::{classify_cacheability, CacheClassKind, StateKey, StoreError, VersionedStore};
use crate::tpg::{OpStatus, Tpg, TxnState};
use crate::value::{stable_hash, FieldMap};

const STALL_TIMEOUT: Duration = Duration::from_secs(60);

/// Cross-flow UDF per VNF id.
pub type UdfTable = HashMap<String, Arc<dyn CrossFlowUdf>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TxnStatus {
    Committed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TxnOutcome {
    pub seq: u64,
    pub vnf_id: String,
    pub instance_id: u32,
    pub txn_id: String,
    pub status: TxnStatus,
    pub reason: Option<String>,
    pub notifications: Vec<String>,
    pub results: FieldMap,
}

impl TxnOutcome {
    /// What the transaction hands downstream: committed transactions forward
    /// their packet, aborted ones drop it.
    pub fn emitted(&self) -> Emitted {
        match self.status {
            TxnStatus::Committed => Emitted::Forward,
            TxnStatus::Aborted => Emitted::Drop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Emitted {
    Forward,
    Drop,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExecMetrics {
    pub ops_executed: usize,
    pub ops_aborted: usize,
    /// Per-op execution time, nanoseconds.
    pub op_latency_ns: Vec<u64>,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub elapsed: Duration,
    pub commits: usize,
    pub aborts: usize,
}

impl ExecMetrics {
    pub fn latency_percentile_us(&self, pct: f64) -> f64 {
        if self.op_latency_ns.is_empty() {
            return 0.0;
        }
        let mut v = self.op_latency_ns.clone();
        v.sort_unstable();
        let idx = ((pct / 100.0) * (v.len() - 1) as f64).round() as usize;
        v[idx.min(v.len() - 1)] as f64 / 1000.0
    }

    pub fn cache_hit_ratio(&self) -> f64 {
        let total = self.cache_hits + self.cache_misses;
        if total == 0 {
            0.0
        } else {
            self.cache_hits as f64 / total as f64
        }
    }
}

/// Mid-batch view of every touched key. A transaction's writes are
/// included only if it had committed when the view was taken.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Probe {
    /// Seqs of the transactions committed at capture time.
    pub committed: BTreeSet<u64>,
    pub state: BTreeMap<StateKey, FieldMap>,
}

#[derive(Debug, Clone, Default)]
pub struct EpochResult {
    /// One outcome per request, in request order.
    pub outcomes: Vec<TxnOutcome>,
    pub metrics: ExecMetrics,
    pub strategy: Option<ScheduleStrategy>,
    /// Execution was halted before every op finished; nothing was committed.
    pub interrupted: bool,
    /// Consistent mid-batch views captured on request.
    pub probes: Vec<Probe>,
}

impl EpochResult {
    pub fn committed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.status == TxnStatus::Committed).count()
    }

    pub fn aborted(&self) -> usize {
        self.outcomes.len() - self.committed()
    }
}

/// Deterministic forced aborts: a request is hit with the given
/// probability, at an op position derived from its sequence number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbortInjection {
    pub probability: f64,
    pub seed: u64,
}

impl AbortInjection {
    /// Position inside a transaction of `ops` accesses at which the request
    /// with `seq` aborts, if it is hit.
    pub fn decide(&self, seq: u64, ops: usize) -> Option<usize> {
        let mut bytes = [0u8; 16];
        bytes[..8].copy_from_slice(&self.seed.to_le_bytes());
        bytes[8..].copy_from_slice(&seq.to_le_bytes());
        let h = stable_hash(&bytes);
        let draw = (h & 0xffff_ffff) as f64 / 4_294_967_296.0;
        (draw < self.probability).then(|| ((h >> 32) % ops.max(1) as u64) as usize)
    }
}

/// What happens to readers downstream of an aborted transaction's writes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum AbortPolicy {
    /// Dependents read the newest non-aborted version and proceed.
    #[default]
    Reread,
    /// A transaction whose op directly follows an aborted write on a shared
    /// key aborts as well.
    Cascade,
}

#[derive(Debug, Clone)]
pub struct ExecConfig {
    pub abort_injection: Option<AbortInjection>,
    pub abort_policy: AbortPolicy,
    pub cache_enabled: bool,
    pub cache_threshold: f64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            abort_injection: None,
            abort_policy: AbortPolicy::Reread,
            cache_enabled: true,
            cache_threshold: crate::store::DEFAULT_CACHE_THRESHOLD,
        }
    }
}

/// Per-batch knobs used by recovery and by tests.
#[derive(Debug, Clone, Default)]
pub struct BatchControl {
    pub epoch: u64,
    /// Requests (by seq) aborted before execution starts, with the reason.
    pub pre_aborted: BTreeMap<u64, String>,
    /// Halt after this many ops have run; the batch is then discarded.
    pub halt_after_ops: Option<usize>,
    /// Capture a consistent view of the touched keys every N ops.
    pub probe_every: Option<usize>,
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("scheduler made no progress; the graph is inconsistent")]
    Stalled,
}

#[derive(Debug, Clone)]
struct CacheLine {
    generation: u64,
    value: Arc<FieldMap>,
}

/// Executor-local caches for read-mostly states, kept across batches.
#[derive(Debug, Default)]
pub struct ExecutorCaches {
    lines: Vec<Mutex<HashMap<StateKey, CacheLine>>>,
    generations: Mutex<HashMap<StateKey, u64>>,
}

impl ExecutorCaches {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, executors: usize) {
        while self.lines.len() < executors {
            self.lines.push(Mutex::new(HashMap::new()));
        }
    }

    /// Drops every line; required after the store is rolled back.
    pub fn clear(&self) {
        for l in &self.lines {
            l.lock().clear();
        }
        self.generations.lock().clear();
    }

    pub fn line_count(&self) -> usize {
        self.lines.iter().map(|l| l.lock().len()).sum()
    }
}

pub struct ExecContext<'a> {
    pub job: &'a ValidatedJob,
    pub udfs: &'a UdfTable,
    pub config: &'a ExecConfig,
}

struct Published {
    seq: u64,
    txn: u32,
    value: Arc<FieldMap>,
}

#[derive(Default)]
struct KeySlot {
    versions: Mutex<Vec<Published>>,
}

#[derive(Default)]
struct Scratch {
    reads: BTreeMap<StateKey, FieldMap>,
    output: Option<HolderOutput>,
    abort_reason: Option<String>,
}

struct Shared<'a> {
    tpg: &'a Tpg,
    store: &'a VersionedStore,
    ctx: &'a ExecContext<'a>,
    assignment: WorkAssignment,
    slots: Vec<KeySlot>,
    generations: Vec<AtomicU64>,
    key_index: HashMap<StateKey, u32>,
    strategy: ScheduleStrategy,
    cached_states: HashSet<String>,
    caches: Option<&'a ExecutorCaches>,
    scratch: Vec<Mutex<Scratch>>,
    progress: AtomicUsize,
    halted: AtomicBool,
    halt_after: Option<usize>,
    probe_every: Option<usize>,
    probes: Mutex<Vec<Probe>>,
}

#[derive(Default)]
struct WorkerStats {
    executed: usize,
    aborted: usize,
    latencies: Vec<u64>,
    hits: u64,
    misses: u64,
}

impl<'a> Shared<'a> {
    fn load(&self, worker: usize, key_id: u32, seq: u64, stats: &mut WorkerStats) -> Result<FieldMap, StoreError> {
        let key = &self.tpg.keys[key_id as usize];
        let use_cache = self.caches.is_some() && self.cached_states.contains(&key.state_id);
        let generation = self.generations[key_id as usize].load(Ordering::Acquire);
        if use_cache {
            let caches = self.caches.expect("checked");
            if let Some(line) = caches.lines[worker].lock().get(key) {
                if line.generation == generation {
                    stats.hits += 1;
                    return Ok((*line.value).clone());
                }
            }
            stats.misses += 1;
        }
        let value = {
            let versions = self.slots[key_id as usize].versions.lock();
            versions.last().map(|p| (*p.value).clone())
        };
        let value = match value {
            Some(v) => v,
            None => self.store.read_at(key, seq)?,
        };
        if use_cache {
            let caches = self.caches.expect("checked");
            caches.lines[worker]
                .lock()
                .insert(key.clone(), CacheLine { generation, value: Arc::new(value.clone()) });
        }
        Ok(value)
    }

    fn abort_txn(&self, txn: u32, reason: String) {
        {
            let mut s = self.scratch[txn as usize].lock();
            if s.abort_reason.is_none() {
                s.abort_reason = Some(reason);
            }
        }
        let first = self.tpg.txn_ops(txn).start;
        propagate_abort(self.tpg, first);
    }

    fn cascade_source(&self, op: u32) -> Option<u64> {
        let me = self.tpg.node(op);
        self.tpg.preds(op).iter().find_map(|&p| {
            let pn = self.tpg.node(p);
            (pn.txn != me.txn && pn.kind == AccessKind::Write && self.tpg.txn_state(pn.txn) == TxnState::Aborted)
                .then_some(pn.owner_seq)
        })
    }

    fn execute_op(&self, worker: usize, op: u32, stats: &mut WorkerStats) -> Result<(), ExecError> {
        let started = Instant::now();
        let node = self.tpg.node(op);
        let txn = node.txn;
        if self.tpg.txn_state(txn) == TxnState::Aborted {
            node.abort();
            return Ok(());
        }
        node.transition(OpStatus::Blocked, OpStatus::Ready);

        if self.ctx.config.abort_policy == AbortPolicy::Cascade {
            if let Some(src) = self.cascade_source(op) {
                self.abort_txn(txn, format!("cascade from aborted seq {src}"));
                node.abort();
                stats.aborted += 1;
                return Ok(());
            }
        }
        let request = &self.tpg.requests[txn as usize];
        if let Some(inj) = &self.ctx.config.abort_injection {
            let ops = self.tpg.txn_ops(txn).len();
            if inj.decide(request.seq, ops) == Some(node.position as usize) {
                self.abort_txn(txn, format!("forced abort at access {}", node.position));
                node.abort();
                stats.aborted += 1;
                return Ok(());
            }
        }

        {
            let mut scratch = self.scratch[txn as usize].lock();
            for &kid in &node.key_ids {
                let key = &self.tpg.keys[kid as usize];
                if !scratch.reads.contains_key(key) {
                    let v = self.load(worker, kid, request.seq, stats)?;
                    scratch.reads.insert(key.clone(), v);
                }
            }
        }

        if !self.tpg.is_tail(op) {
            node.transition(OpStatus::Ready, OpStatus::Executed);
            stats.executed += 1;
            stats.latencies.push(started.elapsed().as_nanos() as u64);
            return Ok(());
        }

        let output = {
            let scratch = self.scratch[txn as usize].lock();
            match self.ctx.udfs.get(&request.vnf_id) {
                None => HolderOutput {
                    abort_reason: Some(format!("no cross-flow UDF for `{}`", request.vnf_id)),
                    ..Default::default()
                },
                Some(udf) => match DataHolder::new(self.ctx.job, request, &scratch.reads) {
                    None => HolderOutput {
                        abort_reason: Some(format!("unknown template `{}`", request.txn_id)),
                        ..Default::default()
                    },
                    Some(mut holder) => {
                        run_cross_flow_udf(udf.as_ref(), &mut holder);
                        holder.finish()
                    }
                },
            }
        };

        if let Some(reason) = output.abort_reason.clone() {
            self.scratch[txn as usize].lock().output = Some(output);
            self.abort_txn(txn, reason);
            node.abort();
            stats.aborted += 1;
            return Ok(());
        }

        for (key, value) in &output.staged {
            let kid = *self.key_index.get(key).expect("staged keys are declared write targets");
            let value = Arc::new(value.clone());
            self.slots[kid as usize].versions.lock().push(Published { seq: request.seq, txn, value: value.clone() });
            let generation = self.generations[kid as usize].fetch_add(1, Ordering::AcqRel) + 1;
            if let Some(caches) = self.caches {
                if self.cached_states.contains(&key.state_id) {
                    caches.lines[worker].lock().insert(key.clone(), CacheLine { generation, value: value.clone() });
                }
            }
        }
        {
            let mut scratch = self.scratch[txn as usize].lock();
            scratch.output = Some(output);
        }
        self.tpg.resolve_txn(txn, TxnState::Committed);
        node.transition(OpStatus::Ready, OpStatus::Executed);
        stats.executed += 1;
        stats.latencies.push(started.elapsed().as_nanos() as u64);
        Ok(())
    }

    /// Atomic view: a transaction's writes are included only if it had
    /// committed before the view was taken.
    fn probe(&self) -> Probe {
        let committed: Vec<bool> = (0..self.tpg.requests.len() as u32)
            .map(|t| self.tpg.txn_state(t) == TxnState::Committed)
            .collect();
        let mut state = BTreeMap::new();
        for (kid, key) in self.tpg.keys.iter().enumerate() {
            let versions = self.slots[kid].versions.lock();
            let visible = versions.iter().rev().find(|p| committed[p.txn as usize]).map(|p| (*p.value).clone());
            drop(versions);
            let value = match visible {
                Some(v) => v,
                None => self.store.latest(key).unwrap_or_default(),
            };
            state.insert(key.clone(), value);
        }
        let committed = committed
            .iter()
            .enumerate()
            .filter(|(_, c)| **c)
            .map(|(t, _)| self.tpg.requests[t].seq)
            .collect();
        Probe { committed, state }
    }

    fn worker_loop(&self, worker: usize) -> Result<WorkerStats, ExecError> {
        let mut stats = WorkerStats::default();
        let mut dispatcher = Dispatcher::new(worker, &self.assignment, self.strategy);
        let mut last_progress = self.progress.load(Ordering::Acquire);
        let mut idle_since = Instant::now();
        loop {
            if self.halted.load(Ordering::Acquire) {
                break;
            }
            match dispatcher.next_ready(&self.assignment, self.tpg) {
                Some(unit) => {
                    while let Some(op) = dispatcher.current_op(unit, &self.assignment, self.tpg) {
                        if !self.tpg.deps_satisfied(op) || self.halted.load(Ordering::Acquire) {
                            break;
                        }
                        self.execute_op(worker, op, &mut stats)?;
                        dispatcher.note_executed(op);
                        let done = self.progress.fetch_add(1, Ordering::AcqRel) + 1;
                        if let Some(limit) = self.halt_after {
                            if done >= limit {
                                self.halted.store(true, Ordering::Release);
                            }
                        }
                        if let Some(every) = self.probe_every {
                            if done.is_multiple_of(every) {
                                let view = self.probe();
                                self.probes.lock().push(view);
                            }
                        }
                    }
                }
                None => {
                    if dispatcher.is_drained(&self.assignment, self.tpg) {
                        break;
                    }
                    let now = self.progress.load(Ordering::Acquire);
                    if now != last_progress {
                        last_progress = now;
                        idle_since = Instant::now();
                    } else if idle_since.elapsed() > STALL_TIMEOUT {
                        return Err(ExecError::Stalled);
                    }
                    std::thread::yield_now();
                }
            }
        }
        Ok(stats)
    }
}

/// Aborts the transaction owning `op`: the transaction resolves as
/// aborted, which lets its dependents in other transactions read around
/// writes that were never published. Its unvisited ops stay in place and
/// are marked aborted only once their own predecessors have finished, so
/// a dependent can never overtake an earlier writer on the same key.
///
/// Returns the dependents from other transactions.
pub fn propagate_abort(tpg: &Tpg, op: u32) -> BTreeSet<u32> {
    let txn = tpg.node(op).txn;
    tpg.resolve_txn(txn, TxnState::Aborted);
    let mut affected = BTreeSet::new();
    for sibling in tpg.txn_ops(txn) {
        for &s in tpg.succs(sibling) {
            if tpg.node(s).txn != txn {
                affected.insert(s);
            }
        }
    }
    affected
}

/// Installs committed writes at their owning sequence numbers, in ascending
/// order. Returns the number of versions written.
pub fn commit_epoch(store: &mut VersionedStore, mut writes: Vec<(u64, StateKey, FieldMap)>) -> Result<usize, StoreError> {
    writes.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    let n = writes.len();
    for (seq, key, value) in writes {
        store.write_at(key, seq, value)?;
    }
    Ok(n)
}

/// Executes one stage of one batch with `executors` workers and, unless the
/// run was halted, installs the committed writes in `store`.
pub fn execute_batch(
    tpg: &Tpg,
    strategy: ScheduleStrategy,
    executors: usize,
    store: &mut VersionedStore,
    ctx: &ExecContext<'_>,
    mut caches: Option<&mut ExecutorCaches>,
    control: &BatchControl,
) -> Result<EpochResult, ExecError> {
    let executors = executors.max(1);
    store.begin_epoch(control.epoch)?;
    let use_cache = ctx.config.cache_enabled && caches.is_some();
    if let Some(c) = caches.as_deref_mut() {
        c.ensure(executors);
    }
    let caches: Option<&ExecutorCaches> = if use_cache { caches.map(|c| &*c) } else { None };

    let cached_states: HashSet<String> = if use_cache {
        classify_cacheability(&tpg.access_counts(), ctx.config.cache_threshold)
            .into_iter()
            .filter(|c| c.class == CacheClassKind::CachedReadMostly)
            .map(|c| c.state_id)
            .collect()
    } else {
        HashSet::new()
    };
    let generations: Vec<AtomicU64> = {
        let persisted = caches.map(|c| c.generations.lock());
        tpg.keys
            .iter()
            .map(|k| AtomicU64::new(persisted.as_ref().and_then(|g| g.get(k).copied()).unwrap_or(0)))
            .collect()
    };
    let key_index = tpg.keys.iter().enumerate().map(|(i, k)| (k.clone(), i as u32)).collect();

    let shared = Shared {
        tpg,
        store: &*store,
        ctx,
        assignment: assign_work(tpg, strategy, executors),
        slots: (0..tpg.keys.len()).map(|_| KeySlot::default()).collect(),
        generations,
        key_index,
        strategy,
        cached_states,
        caches,
        scratch: (0..tpg.requests.len()).map(|_| Mutex::new(Scratch::default())).collect(),
        progress: AtomicUsize::new(0),
        halted: AtomicBool::new(false),
        halt_after: control.halt_after_ops,
        probe_every: control.probe_every.filter(|&n| n > 0),
        probes: Mutex::new(Vec::new()),
    };
    for (txn, req) in tpg.requests.iter().enumerate() {
        if let Some(reason) = control.pre_aborted.get(&req.seq) {
            shared.abort_txn(txn as u32, reason.clone());
        }
    }

    let started = Instant::now();
    let results: Vec<Result<WorkerStats, ExecError>> = if executors == 1 {
        vec![shared.worker_loop(0)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..executors).map(|w| {
                let shared = &shared;
                scope.spawn(move || {
                    let r = shared.worker_loop(w);
                    if r.is_err() {
                        shared.halted.store(true, Ordering::Release);
                    }
                    r
                })
            }).collect();
            handles.into_iter().map(|h| h.join().expect("executor thread panicked")).collect()
        })
    };
    let elapsed = started.elapsed();

    let mut metrics = ExecMetrics { elapsed, ..Default::default() };
    let mut first_err = None;
    for r in results {
        match r {
            Ok(s) => {
                metrics.ops_executed += s.executed;
                metrics.ops_aborted += s.aborted;
                metrics.op_latency_ns.extend(s.latencies);
                metrics.cache_hits += s.hits;
                metrics.cache_misses += s.misses;
            }
            Err(e) => first_err = first_err.or(Some(e)),
        }
    }
    let interrupted = first_err.is_some() || !tpg.all_terminal();
    let Shared { slots, scratch, probes, generations, .. } = shared;
    let probes = probes.into_inner();

    if interrupted {
        store.end_epoch();
        if let Some(c) = caches {
            c.clear();
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        return Ok(EpochResult { metrics, strategy: Some(strategy), interrupted: true, probes, ..Default::default() });
    }

    let mut install = Vec::new();
    for (kid, slot) in slots.into_iter().enumerate() {
        for p in slot.versions.into_inner() {
            let value = Arc::try_unwrap(p.value).unwrap_or_else(|a| (*a).clone());
            install.push((p.seq, tpg.keys[kid].clone(), value));
        }
    }
    store.end_epoch();
    commit_epoch(store, install)?;
    if let Some(c) = caches {
        let mut persisted = c.generations.lock();
        for (kid, g) in generations.into_iter().enumerate() {
            let g = g.into_inner();
            if g > 0 {
                persisted.insert(tpg.keys[kid].clone(), g);
            }
        }
    }

    let outcomes: Vec<TxnOutcome> = tpg
        .requests
        .iter()
        .zip(scratch)
        .enumerate()
        .map(|(txn, (req, scratch))| {
            let scratch = scratch.into_inner();
            let committed = tpg.txn_state(txn as u32) == TxnState::Committed;
            let output = scratch.output.unwrap_or_default();
            TxnOutcome {
                seq: req.seq,
                vnf_id: req.vnf_id.clone(),
                instance_id: req.instance_id,
                txn_id: req.txn_id.clone(),
                status: if committed { TxnStatus::Committed } else { TxnStatus::Aborted },
                reason: if committed { None } else { scratch.abort_reason },
                notifications: output.notifications,
                results: if committed { output.results } else { FieldMap::new() },
            }
        })
        .collect();
    metrics.commits = outcomes.iter().filter(|o| o.status == TxnStatus::Committed).count();
    metrics.aborts = outcomes.len() - metrics.commits;
    Ok(EpochResult { outcomes, metrics, strategy: Some(strategy), interrupted: false, probes })
}
