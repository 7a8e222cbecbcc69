// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Pushes generated traffic through the firewall → load balancer →
//! {trojan, portscan} chain and prints the per-stage metrics.

use chainstate::engine::EngineConfig;
use chainstate::harness::traffic::TrafficSpec;
use chainstate::harness::{metrics_csv, run_experiment, ExperimentConfig};
use chainstate::vnf::{reference_chain, ChainShape};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let job = reference_chain(ChainShape::default());
    let traffic = TrafficSpec { total_events: 2_000, batch_size: 250, flow_count: 200, ..Default::default() };
    let cfg = ExperimentConfig { engine: EngineConfig { executors: 4, ..Default::default() }, ..Default::default() };
    let run = run_experiment(&job, &traffic, &cfg)?;

    print!("{}", metrics_csv(&run.metrics));
    let alarms = run.engine.notifications();
    println!("\n{} outputs, {} notifications", run.outputs.len(), alarms.len());
    for a in alarms.iter().take(5) {
        println!("  {a}");
    }
    println!("final state hash {}", run.snapshot.state_hash());
    Ok(())
}
