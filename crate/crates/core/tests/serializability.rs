// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Every executor count and schedule must reproduce the one-at-a-time
//! replay of the same input.

mod common;

use chainstate::engine::{EngineConfig, StrategyChoice};
use chainstate::executor::{Emitted, ExecConfig};
use chainstate::scheduler::ScheduleStrategy;
use common::*;
use proptest::prelude::*;

const KEYS: usize = 50;
const BALANCE: i64 = 60;

fn config(executors: usize, strategy: ScheduleStrategy) -> EngineConfig {
    EngineConfig { executors, strategy: StrategyChoice::fixed(strategy), ..Default::default() }
}

fn check(seed: u64, theta: f64, executors: usize, strategy: ScheduleStrategy) -> Result<(), TestCaseError> {
    let batches = kv_batches(&kv_traffic(seed, theta, 500, KEYS, 125));
    let engine = run_engine(&kv_test_job(KEYS, BALANCE), config(executors, strategy), &batches);
    let (state, expected, _) = serial_kv_run(&batches, KEYS, BALANCE, |_, _| false);
    prop_assert_eq!(kv_values(&engine.snapshot()), state);
    prop_assert_eq!(by_event(kv_outputs(engine.outputs())), by_event(expected));
    Ok(())
}

#[test]
fn single_executor_matches_serial_replay() {
    for seed in 0..5 {
        for theta in [0.0, 0.6, 1.2] {
            check(seed, theta, 1, ScheduleStrategy::all()[0]).unwrap();
        }
    }
}

#[test]
fn workload_exercises_every_outcome() {
    let batches = kv_batches(&kv_traffic(3, 1.2, 500, KEYS, 125));
    let (_, expected, _) = serial_kv_run(&batches, KEYS, BALANCE, |_, _| false);
    assert!(expected.iter().any(|e| e.emitted == Emitted::Drop));
    assert!(expected.iter().any(|e| e.emitted == Emitted::Forward && e.detail.is_empty()));
    assert!(expected.iter().any(|e| e.detail.starts_with("val=")));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_schedule_matches_serial_replay(
        seed in any::<u64>(),
        theta in prop::sample::select(vec![0.0, 0.6, 1.2]),
        executors in 1usize..=4,
        strategy in prop::sample::select(ScheduleStrategy::all().to_vec()),
    ) {
        check(seed, theta, executors, strategy)?;
    }

    #[test]
    fn cache_does_not_change_results(seed in any::<u64>(), executors in 1usize..=4) {
        // a read-heavy mix so the shared state classifies as cacheable
        let mut spec = kv_traffic(seed, 0.6, 400, KEYS, 100);
        spec.read_ratio = Some(0.9);
        let batches = kv_batches(&spec);
        let run = |cache_enabled| {
            let cfg = EngineConfig {
                exec: ExecConfig { cache_enabled, cache_threshold: 0.5, ..Default::default() },
                ..config(executors, ScheduleStrategy::all()[2])
            };
            let e = run_engine(&kv_test_job(KEYS, BALANCE), cfg, &batches);
            let hits = e.metrics().iter().any(|m| m.cache_hit > 0.0);
            ((kv_values(&e.snapshot()), kv_outputs(e.outputs())), hits)
        };
        let (cached, hits) = run(true);
        prop_assert!(hits);
        prop_assert_eq!(cached, run(false).0);
    }
}
