// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Declares a two-VNF job through the builder, then shows what validation
//! reports for a broken topology.

use chainstate::job::{
    AccessScope, FieldDef, JobBuilder, StateAccessTemplate, StateSchema, TopologyNode, TransactionTemplate,
    VnfDefinition,
};
use chainstate::vnf::{load_doc, reference_chain_doc, ChainShape};
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut b = JobBuilder::new("firewall + portscan");
    b.define_state(StateSchema::new("portscan_likelihood", "source", vec![FieldDef::int("likelihood")], AccessScope::CrossFlow))?;
    b.define_access(StateAccessTemplate::read("check_likelihood", "portscan_likelihood"))?;
    b.define_access(StateAccessTemplate::write("update_likelihood", &["portscan_likelihood"]))?;
    b.define_transaction(TransactionTemplate::new("ps_txn", &["check_likelihood", "update_likelihood"]))?;
    b.define_vnf(VnfDefinition::per_flow("firewall", "firewall").with_params(json!({"blocked_ports": [23]})))?;
    b.define_vnf(VnfDefinition::transactional("portscan detector", &["ps_txn"], "portscan", "portscan"))?;
    b.define_topology(TopologyNode::new("firewall", None, 1, 2))?;
    b.define_topology(TopologyNode::new("portscan detector", Some("firewall"), 2, 2))?;
    let job = b.validate()?;
    for v in &job.vnfs {
        println!(
            "{:<18} stage {} x{} txns {:?}",
            v.vnf_id,
            job.stage_of(&v.vnf_id).unwrap_or(0),
            job.parallelism_of(&v.vnf_id).unwrap_or(0),
            v.txn_ids
        );
    }

    // two roots and an unplaced VNF are reported together
    let mut doc = reference_chain_doc(ChainShape::default());
    doc["topology"][3]["parent"] = serde_json::Value::Null;
    doc["topology"][3]["stage"] = json!(1);
    doc["topology"].as_array_mut().expect("topology list").remove(2);
    match load_doc(&doc) {
        Ok(_) => println!("unexpectedly valid"),
        Err(e) => println!("\nrejected: {e}"),
    }
    Ok(())
}
