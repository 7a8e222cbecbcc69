// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Fails a load-balancer instance halfway through a stage and shows that
//! the result equals a clean run in which that instance's transactions of
//! the failed batch never happened.

use chainstate::engine::{Engine, EngineConfig};
use chainstate::harness::traffic::{generate_traffic, split_batches, TrafficSpec};
use chainstate::resilience::FailureEvent;
use chainstate::vnf::nat_chain;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let job = nat_chain(2, 2, 2);
    let spec = TrafficSpec { total_events: 600, batch_size: 100, key_count: 24, flow_count: 120, ..Default::default() };
    let batches = split_batches(&spec, generate_traffic(&spec));
    let cfg = EngineConfig { executors: 2, snapshot_interval: 2, ..Default::default() };

    let mut failed = Engine::new(job.clone(), cfg.clone())?;
    failed.inject_failure(FailureEvent::mid_batch("load balancer", 1, 1, 5))?;
    for b in &batches {
        if let Some(r) = failed.process_batch(b.clone())?.recovery {
            println!("{}", r.to_json());
        }
    }

    let mut oracle = Engine::new(job, cfg)?;
    oracle.exclude(1, "load balancer", 1);
    for b in &batches {
        oracle.process_batch(b.clone())?;
    }
    let same = failed.snapshot().state == oracle.snapshot().state;
    println!("state equals the filtered run: {same}");
    println!("hash {}", failed.snapshot().state_hash());
    Ok(())
}
