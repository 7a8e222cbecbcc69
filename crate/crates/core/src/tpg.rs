// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Task precedence graphs.
//!
//! One graph is built per stage per batch. Nodes are the state-access
//! operations of the batch's transactions; edges are
//!
//! * `TD` (time): consecutive operations on the same key, in sequence order;
//! * `PD` (parametric): a write that conditionally reads a state written by
//!   an earlier access of the same transaction;
//! * `LD` (logical): consecutive accesses of one transaction.
//!
//! Every edge points from a smaller `(owner_seq, position)` to a larger one,
//! which is what keeps the graph acyclic.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::ops::Range;
use std::sync::atomic::{AtomicU8, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::job::{AccessKind, ValidatedJob};
use crate::scheduler::WorkloadProfile;
use crate::store::{AccessCounts, StateKey};
use crate::value::FieldMap;

/// Builds the global sequence number of the `index`-th request of a batch.
pub fn make_seq(batch_id: u64, index: u32) -> u64 {
    (batch_id << 32) | u64::from(index)
}

pub fn seq_batch(seq: u64) -> u64 {
    seq >> 32
}

/// Runtime instance of a transaction template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionRequest {
    pub seq: u64,
    pub vnf_id: String,
    pub instance_id: u32,
    pub txn_id: String,
    pub packet_data: FieldMap,
    /// access id → instance keys, aligned with the access's state list
    /// (write target first, then conditional reads).
    pub target_keys: BTreeMap<String, Vec<String>>,
}

impl TransactionRequest {
    pub fn new(seq: u64, vnf_id: &str, instance_id: u32, txn_id: &str) -> Self {
        TransactionRequest {
            seq,
            vnf_id: vnf_id.to_owned(),
            instance_id,
            txn_id: txn_id.to_owned(),
            packet_data: FieldMap::new(),
            target_keys: BTreeMap::new(),
        }
    }

    pub fn with_key(mut self, access_id: &str, keys: &[&str]) -> Self {
        self.target_keys.insert(access_id.to_owned(), keys.iter().map(|k| (*k).to_owned()).collect());
        self
    }

    pub fn with_data(mut self, field: &str, value: impl Into<crate::value::Scalar>) -> Self {
        self.packet_data.insert(field.to_owned(), value.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DepKind {
    TD,
    PD,
    LD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DepEdge {
    pub from: u32,
    pub to: u32,
    pub kind: DepKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum OpStatus {
    Blocked = 0,
    Ready = 1,
    Executed = 2,
    Aborted = 3,
}

impl OpStatus {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => OpStatus::Blocked,
            1 => OpStatus::Ready,
            2 => OpStatus::Executed,
            _ => OpStatus::Aborted,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, OpStatus::Executed | OpStatus::Aborted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum TxnState {
    Pending = 0,
    Committed = 1,
    Aborted = 2,
}

#[derive(Debug)]
pub struct OpNode {
    pub op_id: u32,
    /// Index of the owning request in [`Tpg::requests`].
    pub txn: u32,
    pub owner_seq: u64,
    /// Position of the access inside its transaction template.
    pub position: u32,
    pub access_id: String,
    pub kind: AccessKind,
    pub write_key: Option<StateKey>,
    pub read_keys: Vec<StateKey>,
    /// Dense ids of every key this op touches, primary key first.
    pub key_ids: Vec<u32>,
    /// Longest dependency path from a root.
    pub depth: u32,
    status: AtomicU8,
}

impl OpNode {
    pub fn primary_key(&self) -> u32 {
        self.key_ids[0]
    }

    pub fn status(&self) -> OpStatus {
        OpStatus::from_u8(self.status.load(Ordering::Acquire))
    }

    /// Atomic transition; fails when the current status is not `from`.
    pub fn transition(&self, from: OpStatus, to: OpStatus) -> bool {
        let allowed = matches!(
            (from, to),
            (OpStatus::Blocked, OpStatus::Ready)
                | (OpStatus::Ready, OpStatus::Executed)
                | (OpStatus::Ready, OpStatus::Aborted)
                | (OpStatus::Blocked, OpStatus::Aborted)
        );
        allowed
            && self
                .status
                .compare_exchange(from as u8, to as u8, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
    }

    /// Marks the op aborted from any non-terminal status.
    pub fn abort(&self) -> bool {
        self.transition(OpStatus::Blocked, OpStatus::Aborted)
            || self.transition(OpStatus::Ready, OpStatus::Aborted)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TpgError {
    #[error("transaction template `{txn}` is unknown or not owned by `{vnf}`")]
    UnknownTemplate { vnf: String, txn: String },
    #[error("request {seq} has no key for access `{access}`")]
    MissingTargetKey { seq: u64, access: String },
    #[error("request seq {0} appears twice in the batch")]
    DuplicateSeq(u64),
    #[error("dependency cycle among {0} operations")]
    CycleDetected(usize),
}

/// Requests collected for one stage of one batch, with their operations
/// already materialized.
#[derive(Debug, Default)]
pub struct TxnBatch {
    pub stage: u32,
    requests: Vec<TransactionRequest>,
    ops: Vec<PendingOp>,
    ld_edges: Vec<DepEdge>,
    pd_edges: Vec<DepEdge>,
}

#[derive(Debug)]
struct PendingOp {
    txn: u32,
    owner_seq: u64,
    position: u32,
    access_id: String,
    kind: AccessKind,
    write_key: Option<StateKey>,
    read_keys: Vec<StateKey>,
}

impl TxnBatch {
    pub fn new(stage: u32) -> Self {
        TxnBatch { stage, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    pub fn ld_edge_count(&self) -> usize {
        self.ld_edges.len()
    }

    /// Adds one request: one node per template access, chained by LD edges,
    /// plus intra-transaction PD edges.
    pub fn enqueue_request(&mut self, job: &ValidatedJob, req: TransactionRequest) -> Result<(), TpgError> {
        let owned = job.vnf(&req.vnf_id).is_some_and(|v| v.txn_ids.contains(&req.txn_id));
        let template = job.transaction(&req.txn_id).filter(|_| owned).ok_or_else(|| {
            TpgError::UnknownTemplate { vnf: req.vnf_id.clone(), txn: req.txn_id.clone() }
        })?;
        let txn = self.requests.len() as u32;
        let first = self.ops.len() as u32;
        let mut new_ops = Vec::with_capacity(template.access_ids.len());
        for (position, access_id) in template.access_ids.iter().enumerate() {
            let access = job.access(access_id).expect("validated job has every access");
            let keys = req
                .target_keys
                .get(access_id)
                .filter(|k| k.len() == access.state_ids.len())
                .ok_or_else(|| TpgError::MissingTargetKey { seq: req.seq, access: access_id.clone() })?;
            let mut pairs = access.state_ids.iter().zip(keys).map(|(s, k)| StateKey::new(s.clone(), k.clone()));
            let (write_key, read_keys) = match access.kind {
                AccessKind::Read => (None, pairs.collect()),
                AccessKind::Write => {
                    let target = pairs.next();
                    (target, pairs.collect())
                }
            };
            new_ops.push(PendingOp {
                txn,
                owner_seq: req.seq,
                position: position as u32,
                access_id: access_id.clone(),
                kind: access.kind,
                write_key,
                read_keys,
            });
        }
        for i in 1..new_ops.len() as u32 {
            self.ld_edges.push(DepEdge { from: first + i - 1, to: first + i, kind: DepKind::LD });
        }
        for (j, access_id) in template.access_ids.iter().enumerate() {
            let access = job.access(access_id).expect("validated");
            if access.kind != AccessKind::Write {
                continue;
            }
            for (i, earlier_id) in template.access_ids[..j].iter().enumerate() {
                let earlier = job.access(earlier_id).expect("validated");
                if earlier.kind == AccessKind::Write
                    && access.conditional_reads().iter().any(|s| s == earlier.target_state())
                {
                    self.pd_edges.push(DepEdge {
                        from: first + i as u32,
                        to: first + j as u32,
                        kind: DepKind::PD,
                    });
                }
            }
        }
        self.ops.extend(new_ops);
        self.requests.push(req);
        Ok(())
    }

    pub fn build(self) -> Result<Tpg, TpgError> {
        build_tpg(self)
    }
}

/// Dependency graph of one stage of one batch.
#[derive(Debug)]
pub struct Tpg {
    pub stage: u32,
    pub requests: Vec<TransactionRequest>,
    pub nodes: Vec<OpNode>,
    pub edges: Vec<DepEdge>,
    /// Dense key id → key.
    pub keys: Vec<StateKey>,
    /// Per key id, the ops touching it in `(owner_seq, position)` order.
    pub key_chains: Vec<Vec<u32>>,
    preds: Vec<Vec<u32>>,
    succs: Vec<Vec<u32>>,
    txn_ops: Vec<Range<u32>>,
    txn_state: Vec<AtomicU8>,
}

pub fn build_tpg(batch: TxnBatch) -> Result<Tpg, TpgError> {
    let TxnBatch { stage, requests, ops, ld_edges, pd_edges } = batch;
    {
        let mut seqs: Vec<u64> = requests.iter().map(|r| r.seq).collect();
        seqs.sort_unstable();
        if let Some(w) = seqs.windows(2).find(|w| w[0] == w[1]) {
            return Err(TpgError::DuplicateSeq(w[0]));
        }
    }

    let mut key_index: HashMap<StateKey, u32> = HashMap::new();
    let mut keys: Vec<StateKey> = Vec::new();
    let mut intern = |k: &StateKey| -> u32 {
        if let Some(&id) = key_index.get(k) {
            return id;
        }
        let id = keys.len() as u32;
        keys.push(k.clone());
        key_index.insert(k.clone(), id);
        id
    };

    let mut nodes = Vec::with_capacity(ops.len());
    for (op_id, op) in ops.into_iter().enumerate() {
        let mut key_ids: Vec<u32> = Vec::with_capacity(1 + op.read_keys.len());
        for k in op.write_key.iter().chain(op.read_keys.iter()) {
            let id = intern(k);
            if !key_ids.contains(&id) {
                key_ids.push(id);
            }
        }
        nodes.push(OpNode {
            op_id: op_id as u32,
            txn: op.txn,
            owner_seq: op.owner_seq,
            position: op.position,
            access_id: op.access_id,
            kind: op.kind,
            write_key: op.write_key,
            read_keys: op.read_keys,
            key_ids,
            depth: 0,
            status: AtomicU8::new(OpStatus::Blocked as u8),
        });
    }

    let mut key_chains: Vec<Vec<u32>> = vec![Vec::new(); keys.len()];
    for n in &nodes {
        for &k in &n.key_ids {
            key_chains[k as usize].push(n.op_id);
        }
    }
    let mut edges = ld_edges;
    edges.extend(pd_edges);
    for chain in &mut key_chains {
        chain.sort_by_key(|&o| (nodes[o as usize].owner_seq, nodes[o as usize].position));
        for w in chain.windows(2) {
            edges.push(DepEdge { from: w[0], to: w[1], kind: DepKind::TD });
        }
    }
    edges.sort_unstable();
    edges.dedup();

    let n = nodes.len();
    let mut preds: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut succs: Vec<Vec<u32>> = vec![Vec::new(); n];
    for e in &edges {
        if !preds[e.to as usize].contains(&e.from) {
            preds[e.to as usize].push(e.from);
            succs[e.from as usize].push(e.to);
        }
    }

    // Kahn's algorithm; also yields the longest-path depth of each node.
    let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut queue: Vec<u32> = (0..n as u32).filter(|&i| indeg[i as usize] == 0).collect();
    let mut visited = 0;
    let mut head = 0;
    while head < queue.len() {
        let v = queue[head] as usize;
        head += 1;
        visited += 1;
        let d = nodes[v].depth;
        for &s in &succs[v] {
            let s = s as usize;
            nodes[s].depth = nodes[s].depth.max(d + 1);
            indeg[s] -= 1;
            if indeg[s] == 0 {
                queue.push(s as u32);
            }
        }
    }
    if visited != n {
        return Err(TpgError::CycleDetected(n - visited));
    }
    for (i, node) in nodes.iter().enumerate() {
        if preds[i].is_empty() {
            node.status.store(OpStatus::Ready as u8, Ordering::Release);
        }
    }

    let mut txn_ops: Vec<Range<u32>> = vec![0..0; requests.len()];
    for node in &nodes {
        let r = &mut txn_ops[node.txn as usize];
        if r.start == r.end {
            *r = node.op_id..node.op_id + 1;
        } else {
            r.end = node.op_id + 1;
        }
    }
    let txn_state = requests.iter().map(|_| AtomicU8::new(TxnState::Pending as u8)).collect();

    Ok(Tpg { stage, requests, nodes, edges, keys, key_chains, preds, succs, txn_ops, txn_state })
}

impl Tpg {
    pub fn preds(&self, op: u32) -> &[u32] {
        &self.preds[op as usize]
    }

    pub fn succs(&self, op: u32) -> &[u32] {
        &self.succs[op as usize]
    }

    pub fn node(&self, op: u32) -> &OpNode {
        &self.nodes[op as usize]
    }

    /// Op ids of request `txn`, in template order.
    pub fn txn_ops(&self, txn: u32) -> Range<u32> {
        self.txn_ops[txn as usize].clone()
    }

    pub fn is_tail(&self, op: u32) -> bool {
        let n = self.node(op);
        self.txn_ops[n.txn as usize].end == op + 1
    }

    pub fn txn_state(&self, txn: u32) -> TxnState {
        match self.txn_state[txn as usize].load(Ordering::Acquire) {
            0 => TxnState::Pending,
            1 => TxnState::Committed,
            _ => TxnState::Aborted,
        }
    }

    /// Resolves a pending transaction. Returns false when it was already
    /// resolved.
    pub fn resolve_txn(&self, txn: u32, state: TxnState) -> bool {
        self.txn_state[txn as usize]
            .compare_exchange(TxnState::Pending as u8, state as u8, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
    }

    /// True when every predecessor of `op` has finished. Every predecessor
    /// must be terminal; one from another transaction must also belong to a
    /// resolved (committed or aborted) transaction, since its writes only
    /// become visible once the transaction resolves. Requiring terminal
    /// predecessors keeps readiness transitive along each key's chain even
    /// when a transaction aborts before reaching some of its ops.
    pub fn deps_satisfied(&self, op: u32) -> bool {
        let me = self.node(op);
        self.preds(op).iter().all(|&p| {
            let pn = self.node(p);
            pn.status().is_terminal() && (pn.txn == me.txn || self.txn_state(pn.txn) != TxnState::Pending)
        })
    }

    pub fn edges_of(&self, kind: DepKind) -> impl Iterator<Item = &DepEdge> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }

    pub fn all_terminal(&self) -> bool {
        self.nodes.iter().all(|n| n.status().is_terminal())
    }

    /// Reads and writes per state; conditional reads count as reads.
    pub fn access_counts(&self) -> BTreeMap<String, AccessCounts> {
        let mut out: BTreeMap<String, AccessCounts> = BTreeMap::new();
        for n in &self.nodes {
            if let Some(w) = &n.write_key {
                out.entry(w.state_id.clone()).or_default().writes += 1;
            }
            for r in &n.read_keys {
                out.entry(r.state_id.clone()).or_default().reads += 1;
            }
        }
        out
    }

    /// Deterministic `op_id -kind-> op_id` listing.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let kind = match e.kind {
                DepKind::TD => "TD",
                DepKind::PD => "PD",
                DepKind::LD => "LD",
            };
            let _ = writeln!(out, "{} -{kind}-> {}", e.from, e.to);
        }
        out
    }
}

/// Dependency densities, key skew and mean read-set size of a graph.
pub fn tpg_stats(tpg: &Tpg) -> WorkloadProfile {
    let n = tpg.nodes.len();
    if n == 0 {
        return WorkloadProfile::default();
    }
    let count = |k| tpg.edges_of(k).count() as f64 / n as f64;
    let mut per_key = vec![0usize; tpg.keys.len()];
    for node in &tpg.nodes {
        per_key[node.primary_key() as usize] += 1;
    }
    let max = per_key.iter().copied().max().unwrap_or(0);
    let reads: usize = tpg.nodes.iter().map(|n| n.read_keys.len()).sum();
    WorkloadProfile {
        td_density: count(DepKind::TD),
        pd_density: count(DepKind::PD),
        ld_density: count(DepKind::LD),
        skew: max as f64 / n as f64,
        complexity: reads as f64 / n as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::job::*;
    use crate::value::FieldKind;

    fn job() -> ValidatedJob {
        let mut b = JobBuilder::new("t");
        b.define_state(StateSchema::new("x", "k", vec![FieldDef::int("v")], AccessScope::CrossFlow)).unwrap();
        b.define_state(StateSchema::new(
            "request_history",
            "host",
            vec![FieldDef::new("history", FieldKind::Tokens)],
            AccessScope::CrossFlow,
        ))
        .unwrap();
        b.define_access(StateAccessTemplate::read("rx", "x")).unwrap();
        b.define_access(StateAccessTemplate::write("wx", &["x"])).unwrap();
        b.define_access(StateAccessTemplate::write("wx2", &["x", "x"])).unwrap();
        b.define_access(StateAccessTemplate::read("evaluate_traffic", "request_history")).unwrap();
        b.define_access(StateAccessTemplate::write("record_activity", &["request_history"])).unwrap();
        b.define_transaction(TransactionTemplate::new("r", &["rx"])).unwrap();
        b.define_transaction(TransactionTemplate::new("w", &["wx"])).unwrap();
        b.define_transaction(TransactionTemplate::new("pd", &["wx", "wx2"])).unwrap();
        b.define_transaction(TransactionTemplate::new("td_txn", &["evaluate_traffic", "record_activity"])).unwrap();
        b.define_vnf(VnfDefinition::transactional("v", &["r", "w", "pd", "td_txn"], "kv", "kv")).unwrap();
        b.define_topology(TopologyNode::new("v", None, 1, 1)).unwrap();
        b.validate().unwrap()
    }

    #[test]
    fn td_txn_materializes_two_nodes_one_ld() {
        let job = job();
        let mut batch = TxnBatch::new(1);
        let req = TransactionRequest::new(1, "v", 0, "td_txn")
            .with_key("evaluate_traffic", &["h1"])
            .with_key("record_activity", &["h1"]);
        batch.enqueue_request(&job, req).unwrap();
        assert_eq!(batch.op_count(), 2);
        assert_eq!(batch.ld_edge_count(), 1);
    }

    #[test]
    fn missing_key_and_unknown_template() {
        let job = job();
        let mut batch = TxnBatch::new(1);
        let req = TransactionRequest::new(1, "v", 0, "td_txn").with_key("evaluate_traffic", &["h1"]);
        assert_eq!(
            batch.enqueue_request(&job, req).unwrap_err(),
            TpgError::MissingTargetKey { seq: 1, access: "record_activity".into() }
        );
        let req = TransactionRequest::new(1, "v", 0, "nope");
        assert!(matches!(batch.enqueue_request(&job, req), Err(TpgError::UnknownTemplate { .. })));
    }

    #[test]
    fn per_key_chain() {
        let job = job();
        let mut batch = TxnBatch::new(1);
        batch.enqueue_request(&job, TransactionRequest::new(1, "v", 0, "w").with_key("wx", &["a"])).unwrap();
        batch.enqueue_request(&job, TransactionRequest::new(2, "v", 0, "r").with_key("rx", &["a"])).unwrap();
        batch.enqueue_request(&job, TransactionRequest::new(3, "v", 0, "w").with_key("wx", &["a"])).unwrap();
        let tpg = batch.build().unwrap();
        assert_eq!(tpg.edge_list(), "0 -TD-> 1\n1 -TD-> 2\n");
        assert_eq!(tpg.node(0).status(), OpStatus::Ready);
        assert_eq!(tpg.node(1).status(), OpStatus::Blocked);
    }

    #[test]
    fn disjoint_keys_have_no_edges() {
        let job = job();
        let mut batch = TxnBatch::new(1);
        batch.enqueue_request(&job, TransactionRequest::new(1, "v", 0, "w").with_key("wx", &["h1"])).unwrap();
        batch.enqueue_request(&job, TransactionRequest::new(2, "v", 0, "w").with_key("wx", &["h2"])).unwrap();
        let tpg = batch.build().unwrap();
        assert!(tpg.edges.is_empty());
        assert!(tpg.nodes.iter().all(|n| n.status() == OpStatus::Ready));
    }

    #[test]
    fn intra_txn_pd_edge() {
        let job = job();
        let mut batch = TxnBatch::new(1);
        let req = TransactionRequest::new(1, "v", 0, "pd").with_key("wx", &["a"]).with_key("wx2", &["b", "a"]);
        batch.enqueue_request(&job, req).unwrap();
        let tpg = batch.build().unwrap();
        let kinds: Vec<DepKind> = tpg.edges.iter().map(|e| e.kind).collect();
        assert!(kinds.contains(&DepKind::PD));
        assert!(kinds.contains(&DepKind::LD));
        assert!(kinds.contains(&DepKind::TD));
    }

    #[test]
    fn stats_of_single_key_chain() {
        let job = job();
        let mut batch = TxnBatch::new(1);
        for s in 1..=10 {
            batch.enqueue_request(&job, TransactionRequest::new(s, "v", 0, "w").with_key("wx", &["a"])).unwrap();
        }
        let p = tpg_stats(&batch.build().unwrap());
        assert!((p.skew - 1.0).abs() < 1e-12);
        assert!((p.td_density - 0.9).abs() < 1e-12);
        let empty = tpg_stats(&TxnBatch::new(1).build().unwrap());
        assert_eq!(empty, WorkloadProfile::default());
    }

    #[test]
    fn duplicate_seq_rejected() {
        let job = job();
        let mut batch = TxnBatch::new(1);
        batch.enqueue_request(&job, TransactionRequest::new(1, "v", 0, "w").with_key("wx", &["a"])).unwrap();
        batch.enqueue_request(&job, TransactionRequest::new(1, "v", 0, "w").with_key("wx", &["b"])).unwrap();
        assert_eq!(batch.build().unwrap_err(), TpgError::DuplicateSeq(1));
    }
}
