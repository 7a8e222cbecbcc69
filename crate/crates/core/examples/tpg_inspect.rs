// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Builds the dependency graph of a small key-value batch and prints its
//! edges, its shape and the schedule the heuristic picks for it.

use chainstate::scheduler::select_strategy;
use chainstate::tpg::{make_seq, tpg_stats, TransactionRequest, TxnBatch};
use chainstate::vnf::kv_job;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let job = kv_job(serde_json::json!({"seed_keys": 4, "initial_balance": 100}));
    let requests = [
        TransactionRequest::new(make_seq(1, 0), "kv", 0, "kv_update").with_key("put", &["h0"]).with_data("delta", 5),
        TransactionRequest::new(make_seq(1, 1), "kv", 0, "kv_transfer")
            .with_key("debit", &["h0"])
            .with_key("credit", &["h1", "h0"])
            .with_data("amount", 30),
        TransactionRequest::new(make_seq(1, 2), "kv", 1, "kv_read").with_key("get", &["h1"]),
        TransactionRequest::new(make_seq(1, 3), "kv", 1, "kv_copy")
            .with_key("get", &["h1"])
            .with_key("put_from", &["h2", "h1"]),
    ];
    let mut batch = TxnBatch::new(1);
    for r in requests {
        batch.enqueue_request(&job, r)?;
    }
    let tpg = batch.build()?;
    for (i, n) in tpg.nodes.iter().enumerate() {
        println!("op {i}: txn {} pos {} depth {}", n.txn, n.position, n.depth);
    }
    print!("{}", tpg.edge_list());
    let profile = tpg_stats(&tpg);
    println!("{profile:?}");
    println!("heuristic picks {:?}", select_strategy(&profile, None));
    Ok(())
}
