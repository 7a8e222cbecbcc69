// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::{BTreeMap, BTreeSet};

use chainstate::engine::{EngineConfig, StrategyChoice};
use chainstate::executor::{AbortInjection, AbortPolicy, Emitted, ExecConfig};
use chainstate::scheduler::ScheduleStrategy;
use chainstate::tpg::make_seq;
use chainstate::vnf::{PacketEvent, RequestKind};
use common::*;
use proptest::prelude::*;

const KEYS: usize = 40;
const BALANCE: i64 = 45;

fn engine_cfg(executors: usize, strategy: ScheduleStrategy, exec: ExecConfig) -> EngineConfig {
    EngineConfig { executors, strategy: StrategyChoice::fixed(strategy), exec, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forced_aborts_leave_the_filtered_serial_state(
        seed in 0u64..1_000_000,
        theta in prop::sample::select(vec![0.0, 0.6, 1.2]),
        executors in 1usize..=4,
        strategy in prop::sample::select(ScheduleStrategy::all().to_vec()),
    ) {
        let inj = AbortInjection { probability: 0.2, seed: seed ^ 0xabcd };
        let batches = kv_batches(&kv_traffic(seed, theta, 400, KEYS, 100));
        let exec = ExecConfig { abort_injection: Some(inj), ..Default::default() };
        let engine = run_engine(&kv_test_job(KEYS, BALANCE), engine_cfg(executors, strategy, exec), &batches);
        let (state, expected, skipped) = serial_kv_run(&batches, KEYS, BALANCE, forced(inj));
        prop_assert!(!skipped.is_empty());
        prop_assert_eq!(kv_values(&engine.snapshot()), state);
        let survivors: Vec<KvExpect> =
            kv_outputs(engine.outputs()).into_iter().filter(|o| !skipped.contains(&o.event)).collect();
        prop_assert_eq!(by_event(survivors), by_event(expected));
    }
}

/// Ops of one key-value request as `(keys, writes)` in template order.
fn request_ops(e: &PacketEvent) -> Vec<(Vec<String>, bool)> {
    let (h, d) = (e.host.clone(), e.flow.dst.clone());
    let dedup = |mut v: Vec<String>| {
        v.dedup();
        v
    };
    match e.request_kind {
        RequestKind::Ssh | RequestKind::Irc => vec![(vec![h], false)],
        RequestKind::Other => vec![(vec![h], true)],
        RequestKind::HttpDl => vec![(vec![h.clone()], true), (dedup(vec![d, h]), true)],
        RequestKind::FtpDl => vec![(vec![h.clone()], false), (dedup(vec![d, h]), true)],
    }
}

/// Serial model of the cascading policy: a request aborts when one of its
/// ops directly follows, on some key, a writing op of an aborted request.
fn cascade_oracle(batches: &[Vec<PacketEvent>], inj: &AbortInjection) -> (BTreeMap<String, i64>, BTreeSet<u64>) {
    let mut kv = SerialKv::seeded(KEYS, BALANCE);
    let mut aborted_events = BTreeSet::new();
    for (b, events) in batches.iter().enumerate() {
        // key → (seq of last op's request, was a write)
        let mut last: BTreeMap<String, (u64, bool)> = BTreeMap::new();
        let mut aborted_seqs: BTreeSet<u64> = BTreeSet::new();
        for (i, e) in events.iter().enumerate() {
            let seq = make_seq(b as u64 + 1, i as u32);
            let ops = request_ops(e);
            let cascades = ops.iter().any(|(keys, _)| {
                keys.iter().any(|k| matches!(last.get(k), Some((s, true)) if *s != seq && aborted_seqs.contains(s)))
            });
            let hit = inj.decide(seq, ops.len()).is_some();
            let aborted = cascades || hit || kv.clone().apply(e).emitted == Emitted::Drop;
            for (keys, write) in &ops {
                for k in keys {
                    last.insert(k.clone(), (seq, *write));
                }
            }
            if aborted {
                aborted_seqs.insert(seq);
                aborted_events.insert(e.id);
            } else {
                kv.apply(e);
            }
        }
    }
    (kv.state(), aborted_events)
}

#[test]
fn cascading_policy_matches_its_serial_model() {
    for seed in 0..12u64 {
        for strategy in ScheduleStrategy::all() {
            let inj = AbortInjection { probability: 0.2, seed: seed * 31 };
            let batches = kv_batches(&kv_traffic(seed, 1.2, 300, KEYS, 100));
            let exec = ExecConfig {
                abort_injection: Some(inj),
                abort_policy: AbortPolicy::Cascade,
                ..Default::default()
            };
            let executors = 1 + (seed as usize % 4);
            let engine = run_engine(&kv_test_job(KEYS, BALANCE), engine_cfg(executors, strategy, exec), &batches);
            let (state, aborted) = cascade_oracle(&batches, &inj);
            assert_eq!(kv_values(&engine.snapshot()), state, "seed {seed} {strategy:?}");
            let dropped: BTreeSet<u64> = engine
                .outputs()
                .iter()
                .filter(|o| o.emitted == Emitted::Drop)
                .map(|o| o.event)
                .collect();
            assert_eq!(dropped, aborted, "seed {seed} {strategy:?}");
        }
    }
}

/// One update per key, so no request depends on another.
fn disjoint_updates() -> Vec<PacketEvent> {
    let mut events = kv_batches(&kv_traffic(1, 0.0, KEYS, KEYS, KEYS)).concat();
    for (i, e) in events.iter_mut().enumerate() {
        e.host = format!("h{i}");
        e.request_kind = RequestKind::Other;
    }
    events
}

#[test]
fn policies_agree_without_dependent_writers() {
    let inj = AbortInjection { probability: 0.3, seed: 5 };
    let batches = vec![disjoint_updates()];
    let run = |policy| {
        let exec = ExecConfig { abort_injection: Some(inj), abort_policy: policy, ..Default::default() };
        let e = run_engine(&kv_test_job(KEYS, BALANCE), engine_cfg(2, ScheduleStrategy::all()[0], exec), &batches);
        (kv_values(&e.snapshot()), e.outputs().iter().filter(|o| o.emitted == Emitted::Drop).count())
    };
    let (reread, reread_drops) = run(AbortPolicy::Reread);
    assert!(reread_drops > 0);
    assert_eq!((reread, reread_drops), run(AbortPolicy::Cascade));
}

#[test]
fn probes_never_show_partial_transactions() {
    let mut seen_partial_commit = false;
    for seed in 0..20u64 {
        seen_partial_commit |= check_probes(seed, KEYS, BALANCE).unwrap();
    }
    assert!(seen_partial_commit, "no probe landed mid-batch");
}
