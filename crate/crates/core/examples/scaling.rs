// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Rescales the firewall and load balancer mid-run, then moves a
//! straggling instance's flows to a backup. Per-flow results match a run
//! with neither.

use chainstate::engine::{Engine, EngineConfig};
use chainstate::harness::traffic::{generate_traffic, split_batches, TrafficSpec};
use chainstate::vnf::{reference_chain, ChainShape};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let job = reference_chain(ChainShape { firewall: 2, load_balancer: 4, trojan: 2, portscan: 2 });
    let spec = TrafficSpec { total_events: 1_000, batch_size: 125, flow_count: 120, failed_ratio: 0.0, ..Default::default() };
    let batches = split_batches(&spec, generate_traffic(&spec));
    let cfg = EngineConfig { executors: 2, ..Default::default() };

    let mut plain = Engine::new(job.clone(), cfg.clone())?;
    let mut moved = Engine::new(job, cfg)?;
    for (i, b) in batches.iter().enumerate() {
        match i {
            2 => {
                let plan = moved.scale("firewall", 4)?;
                println!("firewall 2 -> 4: {} of {} flows change instance", plan.transfers.len(), plan.reassignment.len());
            }
            4 => {
                let plan = moved.scale("load balancer", 2)?;
                println!("load balancer 4 -> 2: {} flows change instance", plan.transfers.len());
            }
            6 => {
                let flows = moved.mitigate_straggler("load balancer", 1, 0)?;
                println!("straggler: {} flows cloned from instance 1 to 0", flows.len());
            }
            _ => {}
        }
        plain.process_batch(b.clone())?;
        moved.process_batch(b.clone())?;
    }
    println!("per-flow outputs equal: {}", plain.outputs_by_flow() == moved.outputs_by_flow());
    println!("per-flow state equal: {}", plain.flow_states("firewall") == moved.flow_states("firewall"));
    Ok(())
}
