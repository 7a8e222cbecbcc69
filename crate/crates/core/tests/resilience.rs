// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Failures, rollback and replay, rescaling and straggler mitigation must
//! all be invisible in the results, apart from transactions dropped with a
//! failed instance.

mod common;

use chainstate::engine::{Engine, EngineConfig};
use chainstate::harness::traffic::TrafficSpec;
use chainstate::job::ValidatedJob;
use chainstate::resilience::{hash_route, FailureEvent, RecoveryReport, FAILED_INSTANCE_REASON};
use chainstate::vnf::{nat_chain, reference_chain, ChainShape, PacketEvent};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn traffic(seed: u64) -> TrafficSpec {
    TrafficSpec {
        total_events: 1000,
        batch_size: 125,
        key_count: 24,
        flow_count: 120,
        zipf_theta: 0.6,
        seed,
        ..Default::default()
    }
}

fn cfg(executors: usize, snapshot_interval: u64) -> EngineConfig {
    EngineConfig { executors, snapshot_interval, ..Default::default() }
}

fn run_with(
    job: &ValidatedJob,
    config: EngineConfig,
    batches: &[Vec<PacketEvent>],
    setup: impl FnOnce(&mut Engine),
) -> (Engine, Vec<RecoveryReport>) {
    let mut engine = Engine::new(job.clone(), config).unwrap();
    setup(&mut engine);
    let mut recoveries = Vec::new();
    for b in batches {
        let r = engine.process_batch(b.clone()).unwrap();
        recoveries.extend(r.recovery);
    }
    (engine, recoveries)
}

fn outputs(engine: &Engine) -> Vec<String> {
    engine.outputs().iter().map(|o| format!("{o:?}")).collect()
}

#[test]
fn boundary_failure_changes_nothing() {
    let job = nat_chain(2, 2, 2);
    let batches = kv_batches(&traffic(1));
    let (base, _) = run_with(&job, cfg(2, 4), &batches, |_| {});
    for (interval, at) in [(4, 6), (4, 3), (0, 5)] {
        let (e, rec) = run_with(&job, cfg(2, interval), &batches, |e| {
            e.inject_failure(FailureEvent::at_boundary("load balancer", 1, at)).unwrap();
        });
        assert_eq!(rec.len(), 1);
        let r = &rec[0];
        assert!(!r.interrupted && r.aborted_txns == 0);
        let restored = (at - 1).checked_div(interval).map_or(0, |n| n * interval);
        assert_eq!(r.no_snapshot_available, restored == 0);
        assert_eq!(r.restored_batch, restored);
        assert_eq!(r.replayed_batches, ((restored + 1)..at).collect::<Vec<_>>());
        assert_eq!(e.snapshot().state, base.snapshot().state);
        assert_eq!(outputs(&e), outputs(&base));
    }
}

#[test]
fn mid_batch_failure_drops_only_the_failed_instance() {
    let job = nat_chain(2, 2, 2);
    let batches = kv_batches(&traffic(2));
    let (base, _) = run_with(&job, cfg(2, 4), &batches, |_| {});
    let (e, rec) = run_with(&job, cfg(2, 4), &batches, |e| {
        e.inject_failure(FailureEvent::mid_batch("load balancer", 1, 1, 5)).unwrap();
    });
    let r = &rec[0];
    assert!(r.interrupted && r.aborted_txns > 0);
    // the load balancer only transacts on opening packets and the port
    // pool runs dry within the first batch, so fail there
    assert_eq!((r.restored_batch, r.replayed_batches.len()), (0, 0));

    let (oracle, _) = run_with(&job, cfg(1, 4), &batches, |o| o.exclude(1, "load balancer", 1));
    assert_eq!(e.snapshot().state, oracle.snapshot().state);
    assert_eq!(outputs(&e), outputs(&oracle));
    let dropped = e.outputs().iter().filter(|o| o.detail == FAILED_INSTANCE_REASON).count();
    assert_eq!(dropped, r.aborted_txns);

    // the upstream NAT never notices
    let nat = |eng: &Engine| -> Vec<String> {
        eng.outputs().iter().filter(|o| o.vnf == "nat").map(|o| format!("{o:?}")).collect()
    };
    assert_eq!(nat(&e), nat(&base));
    assert_eq!(single_outcome_violation(e.outputs(), &batches.concat(), "nat"), None);
}

#[test]
fn random_failures_match_the_filtered_oracle() {
    let job = roomy_nat_chain();
    let mut interrupted = 0;
    let vnfs = ["nat", "load balancer", "trojan detector"];
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = kv_batches(&TrafficSpec { total_events: 480, batch_size: 80, ..traffic(seed) });
        let vnf = vnfs[rng.random_range(0..vnfs.len())];
        let instance = rng.random_range(0..2);
        let at = rng.random_range(1..=batches.len() as u64);
        let after_ops = rng.random_range(0..60usize);
        let interval = rng.random_range(0..4u64);
        let executors = rng.random_range(1..=4usize);
        let failure = if rng.random_bool(0.3) {
            FailureEvent::at_boundary(vnf, instance, at)
        } else {
            FailureEvent::mid_batch(vnf, instance, at, after_ops)
        };
        let (e, rec) = run_with(&job, cfg(executors, interval), &batches, |e| e.inject_failure(failure.clone()).unwrap());
        let r = &rec[0];
        let (oracle, _) = run_with(&job, cfg(1, interval), &batches, |o| {
            if r.interrupted {
                o.exclude(at, vnf, instance);
            }
        });
        assert_eq!(e.snapshot().state, oracle.snapshot().state, "seed {seed} {failure:?}");
        assert_eq!(outputs(&e), outputs(&oracle), "seed {seed} {failure:?}");
        assert_eq!(single_outcome_violation(e.outputs(), &batches.concat(), "nat"), None);
        interrupted += usize::from(r.interrupted);
    }
    assert!(interrupted >= 30, "only {interrupted} failures cut a stage short");
}

#[test]
fn replay_is_checked_against_the_original_log() {
    // two failures back to back: the second replays batches that were
    // themselves replayed by the first
    let job = nat_chain(2, 2, 2);
    let batches = kv_batches(&traffic(3));
    let (base, _) = run_with(&job, cfg(3, 0), &batches, |_| {});
    let (e, rec) = run_with(&job, cfg(3, 0), &batches, |e| {
        e.inject_failure(FailureEvent::at_boundary("nat", 0, 3)).unwrap();
        e.inject_failure(FailureEvent::at_boundary("trojan detector", 1, 7)).unwrap();
    });
    assert_eq!(rec.len(), 2);
    assert_eq!(rec[1].replayed_batches, (1..7).collect::<Vec<_>>());
    assert_eq!(e.snapshot().state, base.snapshot().state);
}

fn chain_batches(seed: u64) -> Vec<Vec<PacketEvent>> {
    kv_batches(&TrafficSpec { failed_ratio: 0.0, ..traffic(seed) })
}

fn shape() -> ChainShape {
    ChainShape { firewall: 2, load_balancer: 4, trojan: 2, portscan: 2 }
}

#[test]
fn rescaling_preserves_per_flow_results_and_state() {
    let job = reference_chain(shape());
    let batches = chain_batches(4);
    let (base, _) = run_with(&job, cfg(2, 4), &batches, |_| {});
    let (e, _) = run_with(&job, cfg(2, 4), &batches, |e| {
        e.schedule_scale("firewall", 4, 3).unwrap();
        e.schedule_scale("load balancer", 2, 5).unwrap();
    });
    assert_eq!(e.parallelism("firewall"), Some(4));
    assert_eq!(e.parallelism("load balancer"), Some(2));
    assert_eq!(per_flow(e.outputs()), per_flow(base.outputs()));
    assert_eq!(e.snapshot().state, base.snapshot().state);
    for v in ["firewall", "load balancer", "trojan detector", "portscan detector"] {
        assert_eq!(e.flow_states(v), base.flow_states(v), "{v}");
    }
    // flows now live where the new hash puts them
    for flow in e.flow_states("firewall").keys() {
        let owner = hash_route(flow, 4);
        assert!(e.local_state("firewall", owner).unwrap().contains_key(flow));
    }
}

#[test]
fn scale_round_trip_restores_placement() {
    let job = reference_chain(shape());
    let batches = chain_batches(5);
    let mut e = Engine::new(job, cfg(1, 4)).unwrap();
    for b in &batches[..3] {
        e.process_batch(b.clone()).unwrap();
    }
    let before: Vec<_> = (0..4).map(|i| e.local_state("load balancer", i).cloned()).collect();
    let flows = e.flow_states("load balancer");
    let down = e.scale("load balancer", 2).unwrap();
    assert_eq!(down.reassignment.len(), flows.len());
    assert_eq!(e.flow_states("load balancer"), flows);
    e.scale("load balancer", 4).unwrap();
    let after: Vec<_> = (0..4).map(|i| e.local_state("load balancer", i).cloned()).collect();
    assert_eq!(before, after);
}

#[test]
fn failure_after_rescale_replays_the_rescale() {
    let job = reference_chain(shape());
    let batches = chain_batches(6);
    let scaled = |e: &mut Engine| e.schedule_scale("firewall", 4, 2).unwrap();
    let (base, _) = run_with(&job, cfg(2, 4), &batches, scaled);
    let (e, rec) = run_with(&job, cfg(2, 4), &batches, |e| {
        scaled(e);
        e.inject_failure(FailureEvent::at_boundary("firewall", 1, 4)).unwrap();
    });
    assert_eq!(rec[0].replayed_batches, vec![1, 2, 3]);
    assert_eq!(e.parallelism("firewall"), Some(4));
    assert_eq!(e.snapshot().state, base.snapshot().state);
    assert_eq!(outputs(&e), outputs(&base));
    assert_eq!(e.flow_states("firewall"), base.flow_states("firewall"));
}

#[test]
fn straggler_flows_move_to_the_backup() {
    let job = reference_chain(shape());
    let batches = chain_batches(7);
    let (base, _) = run_with(&job, cfg(2, 4), &batches, |_| {});
    let mut e = Engine::new(job, cfg(2, 4)).unwrap();
    let mut moved = Vec::new();
    for (i, b) in batches.iter().enumerate() {
        if i == 3 {
            moved = e.mitigate_straggler("load balancer", 1, 3).unwrap();
            assert!(!moved.is_empty());
            assert!(e.local_state("load balancer", 1).unwrap().is_empty());
        }
        e.process_batch(b.clone()).unwrap();
    }
    for flow in &moved {
        assert_eq!(e.route("load balancer", flow), 3);
    }
    assert_eq!(per_flow(e.outputs()), per_flow(base.outputs()));
    assert_eq!(e.snapshot().state, base.snapshot().state);
    assert_eq!(e.flow_states("load balancer"), base.flow_states("load balancer"));
}

#[test]
fn failure_reports_validate_their_target() {
    let job = nat_chain(2, 2, 2);
    let mut e = Engine::new(job, EngineConfig::default()).unwrap();
    assert!(e.inject_failure(FailureEvent::at_boundary("nat", 2, 1)).is_err());
    assert!(e.inject_failure(FailureEvent::at_boundary("dns", 0, 1)).is_err());
    assert!(e.schedule_scale("nat", 0, 1).is_err());
}
