// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Runs a reduced strategy × granularity × executors × skew matrix on the
//! key-value job and prints it as CSV.

use chainstate::harness::traffic::TrafficSpec;
use chainstate::harness::{bench, bench_csv, BenchMatrix};
use chainstate::vnf::kv_job;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let job = kv_job(serde_json::json!({"seed_keys": 100, "initial_balance": 1_000}));
    let matrix = BenchMatrix {
        executors: vec![1, 2],
        thetas: vec![0.0, 1.2],
        traffic: TrafficSpec { total_events: 4_000, batch_size: 500, key_count: 100, flow_count: 400, ..Default::default() },
        ..Default::default()
    };
    let rows = bench(&job, &matrix)?;
    print!("{}", bench_csv(&rows));
    // every cell ran the same input, so every state hash agrees
    let hashes: std::collections::BTreeSet<_> = rows.iter().map(|r| (r.cell.theta.to_bits(), &r.state_hash)).collect();
    println!("distinct final states per theta: {}", hashes.len() / matrix.thetas.len());
    Ok(())
}
