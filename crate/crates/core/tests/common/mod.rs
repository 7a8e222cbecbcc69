// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Oracles shared by the integration tests. None of them touch the
//! dependency graph or the executor: they replay inputs one at a time.

#![allow(dead_code)]

pub mod golden;
pub mod tpg_ref;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chainstate::engine::{Engine, EngineConfig, OutputRecord};
use chainstate::executor::{
    execute_batch, AbortInjection, BatchControl, CrossFlowUdf, Emitted, ExecConfig, ExecContext, TxnStatus, UdfTable,
};
use chainstate::scheduler::ScheduleStrategy;
use chainstate::harness::traffic::{generate_traffic, split_batches, TrafficSpec};
use chainstate::job::ValidatedJob;
use chainstate::store::{Snapshot, StateKey, VersionedStore};
use chainstate::tpg::{make_seq, TxnBatch};
use chainstate::value::{FieldMap, Scalar};
use chainstate::vnf::{kv_cross_flow, kv_job, load_doc, nat_chain_doc, KvOp, PacketEvent, RequestKind};

pub const KV_MOD: i64 = 1_000_000_007;

pub fn kv_test_job(seed_keys: usize, initial_balance: i64) -> ValidatedJob {
    kv_job(serde_json::json!({"seed_keys": seed_keys, "initial_balance": initial_balance}))
}

pub fn kv_traffic(seed: u64, theta: f64, events: usize, keys: usize, batch: usize) -> TrafficSpec {
    TrafficSpec {
        total_events: events,
        batch_size: batch,
        key_count: keys,
        flow_count: keys * 4,
        zipf_theta: theta,
        max_bytes: 60,
        seed,
        ..Default::default()
    }
}

/// Expected result of one key-value request replayed on its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvExpect {
    pub event: u64,
    pub emitted: Emitted,
    pub detail: String,
}

/// Serial key-value model: every request sees all effects of the ones
/// before it and nothing else.
#[derive(Debug, Clone, Default)]
pub struct SerialKv {
    pub vals: BTreeMap<String, i64>,
}

impl SerialKv {
    pub fn seeded(keys: usize, balance: i64) -> Self {
        SerialKv { vals: (0..keys).map(|i| (format!("h{i}"), balance)).collect() }
    }

    fn get(&self, k: &str) -> i64 {
        self.vals.get(k).copied().unwrap_or(0)
    }

    /// Number of state accesses the request issues.
    pub fn access_count(e: &PacketEvent) -> usize {
        match e.request_kind {
            RequestKind::Ssh | RequestKind::Irc | RequestKind::Other => 1,
            RequestKind::HttpDl | RequestKind::FtpDl => 2,
        }
    }

    pub fn apply(&mut self, e: &PacketEvent) -> KvExpect {
        let host = e.host.clone();
        let dst = e.flow.dst.clone();
        let ok = |detail: String| KvExpect { event: e.id, emitted: Emitted::Forward, detail };
        match e.request_kind {
            RequestKind::Ssh | RequestKind::Irc => ok(format!("val={}", self.get(&host))),
            RequestKind::Other => {
                let v = (self.get(&host) * 3 + e.bytes).rem_euclid(KV_MOD);
                self.vals.insert(host, v);
                ok(format!("val={v}"))
            }
            RequestKind::HttpDl => {
                let src = self.get(&host);
                if src < e.bytes {
                    return KvExpect { event: e.id, emitted: Emitted::Drop, detail: "insufficient funds".into() };
                }
                if host != dst {
                    let d = self.get(&dst);
                    self.vals.insert(host, src - e.bytes);
                    self.vals.insert(dst, d + e.bytes);
                }
                ok(String::new())
            }
            RequestKind::FtpDl => {
                let v = (self.get(&host) * 7 + 1).rem_euclid(KV_MOD);
                self.vals.insert(dst, v);
                ok(format!("val={v}"))
            }
        }
    }

    /// Snapshot form: only keys that exist in the store.
    pub fn state(&self) -> BTreeMap<String, i64> {
        self.vals.clone()
    }
}

/// `kv` values of a snapshot.
pub fn kv_values(s: &Snapshot) -> BTreeMap<String, i64> {
    s.state
        .get("kv")
        .map(|m| m.iter().map(|(k, r)| (k.clone(), r.get("val").and_then(Scalar::as_int).unwrap_or(0))).collect())
        .unwrap_or_default()
}

/// Runs the serial model over batches, skipping requests that `skip`
/// selects by `(seq, access count)`. Returns the final values and the
/// expected outputs of the requests that were not skipped.
pub fn serial_kv_run(
    batches: &[Vec<PacketEvent>],
    seed_keys: usize,
    balance: i64,
    skip: impl Fn(u64, usize) -> bool,
) -> (BTreeMap<String, i64>, Vec<KvExpect>, BTreeSet<u64>) {
    let mut kv = SerialKv::seeded(seed_keys, balance);
    let mut out = Vec::new();
    let mut skipped = BTreeSet::new();
    for (b, events) in batches.iter().enumerate() {
        for (i, e) in events.iter().enumerate() {
            let seq = make_seq(b as u64 + 1, i as u32);
            if skip(seq, SerialKv::access_count(e)) {
                skipped.insert(e.id);
                continue;
            }
            out.push(kv.apply(e));
        }
    }
    (kv.state(), out, skipped)
}

pub fn forced(inj: AbortInjection) -> impl Fn(u64, usize) -> bool {
    move |seq, ops| inj.decide(seq, ops).is_some()
}

pub fn kv_batches(spec: &TrafficSpec) -> Vec<Vec<PacketEvent>> {
    split_batches(spec, generate_traffic(spec))
}

/// Pushes `batches` through a fresh engine.
pub fn run_engine(job: &ValidatedJob, cfg: EngineConfig, batches: &[Vec<PacketEvent>]) -> Engine {
    let mut engine = Engine::new(job.clone(), cfg).expect("engine builds");
    for b in batches {
        engine.process_batch(b.clone()).expect("batch runs");
    }
    engine
}

/// `(event, emitted, detail)` of every output, in output order.
pub fn kv_outputs(outputs: &[OutputRecord]) -> Vec<KvExpect> {
    outputs.iter().map(|o| KvExpect { event: o.event, emitted: o.emitted, detail: o.detail.clone() }).collect()
}

/// Sorted by event id: batch-internal output order groups by stage, the
/// serial model emits in input order.
pub fn by_event(mut v: Vec<KvExpect>) -> Vec<KvExpect> {
    v.sort_by_key(|e| e.event);
    v
}

/// Per-host sequential replay of the trojan detector: a host alarms when
/// its accepted history plus the new request contains the pattern as a
/// subsequence; alarming requests are not recorded.
pub fn trojan_replay(events: &[PacketEvent], pattern: &[RequestKind]) -> BTreeMap<String, usize> {
    let mut history: BTreeMap<&str, Vec<RequestKind>> = BTreeMap::new();
    let mut alarms: BTreeMap<String, usize> = BTreeMap::new();
    for e in events {
        let h = history.entry(&e.host).or_default();
        let mut cand = h.clone();
        cand.push(e.request_kind);
        let mut it = cand.iter();
        let matched = pattern.iter().all(|p| it.any(|k| k == p));
        if matched {
            *alarms.entry(e.host.clone()).or_default() += 1;
        } else {
            h.push(e.request_kind);
        }
    }
    alarms
}

/// Alarm counts per host from engine notifications of the form
/// `alarm host=H`.
pub fn alarm_counts(notes: &[String]) -> BTreeMap<String, usize> {
    let mut out: BTreeMap<String, usize> = BTreeMap::new();
    for n in notes {
        if let Some(h) = n.strip_prefix("alarm host=") {
            *out.entry(h.to_owned()).or_default() += 1;
        }
    }
    out
}

/// Output records grouped per flow as `(event, vnf, emitted, detail)`.
pub fn per_flow(outputs: &[OutputRecord]) -> BTreeMap<String, Vec<(u64, String, Emitted, String)>> {
    let mut out: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for o in outputs {
        out.entry(o.flow.clone()).or_default().push((o.event, o.vnf.clone(), o.emitted, o.detail.clone()));
    }
    out
}

/// Runs one 300-request batch with 20% forced aborts and probes every five
/// ops. Each probe must equal the serial application of exactly the
/// requests committed at that moment. Returns whether some probe saw a
/// strict, non-empty prefix of the final commits.
pub fn check_probes(seed: u64, keys: usize, balance: i64) -> Result<bool, String> {
    let job = kv_test_job(keys, balance);
    let mut udfs = UdfTable::new();
    let udf: Arc<dyn CrossFlowUdf> = Arc::new(kv_cross_flow);
    udfs.insert("kv".into(), udf);
    let events = kv_batches(&kv_traffic(seed, 0.6, 300, keys, 300)).concat();
    let mut store = VersionedStore::for_job(&job);
    for i in 0..keys {
        let rec = FieldMap::from([("val".to_owned(), Scalar::Int(balance))]);
        store.write_at(StateKey::new("kv", format!("h{i}")), 0, rec).map_err(|e| e.to_string())?;
    }
    let mut batch = TxnBatch::new(1);
    for (i, e) in events.iter().enumerate() {
        batch
            .enqueue_request(&job, KvOp::from_event(e).request(make_seq(1, i as u32), "kv", 0))
            .map_err(|e| e.to_string())?;
    }
    let tpg = batch.build().map_err(|e| e.to_string())?;
    let inj = AbortInjection { probability: 0.2, seed };
    let config = ExecConfig { abort_injection: Some(inj), ..Default::default() };
    let ctx = ExecContext { job: &job, udfs: &udfs, config: &config };
    let control = BatchControl { epoch: 1, probe_every: Some(5), ..Default::default() };
    let strategy = ScheduleStrategy::all()[seed as usize % 6];
    let result = execute_batch(&tpg, strategy, 1 + seed as usize % 4, &mut store, &ctx, None, &control)
        .map_err(|e| e.to_string())?;
    if result.probes.is_empty() {
        return Err(format!("seed {seed}: no probes taken"));
    }

    let committed_final: BTreeSet<u64> =
        result.outcomes.iter().filter(|o| o.status == TxnStatus::Committed).map(|o| o.seq).collect();
    let mut partial = false;
    for probe in &result.probes {
        if !probe.committed.is_subset(&committed_final) {
            return Err(format!("seed {seed}: probe saw a commit that later vanished"));
        }
        partial |= !probe.committed.is_empty() && probe.committed.len() < committed_final.len();
        let mut model = SerialKv::seeded(keys, balance);
        for (i, e) in events.iter().enumerate() {
            if probe.committed.contains(&make_seq(1, i as u32)) {
                model.apply(e);
            }
        }
        for (key, rec) in &probe.state {
            let got = rec.get("val").and_then(Scalar::as_int).unwrap_or(0);
            let want = model.vals.get(&key.key).copied().unwrap_or(0);
            if got != want {
                return Err(format!("seed {seed} key {}: probe shows {got}, serial prefix gives {want}", key.key));
            }
        }
    }
    Ok(partial)
}

/// NAT chain whose port pool outlasts the traffic, so every stage keeps
/// transacting in every batch.
pub fn roomy_nat_chain() -> ValidatedJob {
    let mut doc = nat_chain_doc(2, 2, 2);
    doc["vnfs"][0]["params"]["port_count"] = serde_json::json!(4096);
    load_doc(&doc).expect("nat chain validates")
}

/// Each event has at most one record per VNF, and every event has a record
/// from the entry VNF. Returns the first breach.
pub fn single_outcome_violation(out: &[OutputRecord], events: &[PacketEvent], entry: &str) -> Option<String> {
    let mut seen: BTreeMap<(u64, &str), usize> = BTreeMap::new();
    for o in out {
        *seen.entry((o.event, o.vnf.as_str())).or_default() += 1;
    }
    if let Some(((event, vnf), n)) = seen.iter().find(|(_, &n)| n != 1) {
        return Some(format!("event {event} has {n} outcomes at {vnf}"));
    }
    events.iter().find(|e| !seen.contains_key(&(e.id, entry))).map(|e| format!("event {} lost", e.id))
}
