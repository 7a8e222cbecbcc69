// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Ready-made job documents for the reference VNFs.

use serde_json::{json, Value};

use crate::job::{LoadError, ValidatedJob};

/// Backend hosts of the load balancer in the reference chains.
pub const BACKEND_HOSTS: [&str; 4] = ["srv0", "srv1", "srv2", "srv3"];

/// Instances per VNF of the firewall → load balancer → {trojan, portscan}
/// chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainShape {
    pub firewall: u32,
    pub load_balancer: u32,
    pub trojan: u32,
    pub portscan: u32,
}

impl Default for ChainShape {
    fn default() -> Self {
        ChainShape { firewall: 8, load_balancer: 8, trojan: 4, portscan: 4 }
    }
}

fn host_fields() -> Value {
    Value::Array(BACKEND_HOSTS.iter().map(|h| json!(h)).collect())
}

fn detector_states() -> Value {
    json!([
        {"id": "request_history", "key": "host", "fields": [{"name": "history", "kind": "tokens"}]},
        {"id": "portscan_likelihood", "key": "source", "fields": ["likelihood"]}
    ])
}

/// Firewall → load balancer → trojan and portscan detectors, stages
/// 1, 2, 3, 3.
pub fn reference_chain_doc(shape: ChainShape) -> Value {
    let mut states = vec![
        json!({"id": "security_policy", "key": "rule", "fields": ["action"]}),
        json!({"id": "host_load", "key": "cluster", "fields": host_fields()}),
    ];
    states.extend(detector_states().as_array().cloned().unwrap_or_default());
    json!({
        "name": "reference chain",
        "states": states,
        "accesses": [
            {"id": "update_policy", "states": ["security_policy"], "type": "W"},
            {"id": "update_least_loaded_host", "states": ["host_load"], "type": "W"},
            {"id": "evaluate_traffic", "states": ["request_history"], "type": "R"},
            {"id": "record_activity", "states": ["request_history"], "type": "W"},
            {"id": "check_likelihood", "states": ["portscan_likelihood"], "type": "R"},
            {"id": "update_likelihood", "states": ["portscan_likelihood"], "type": "W"}
        ],
        "transactions": [
            {"id": "lb_txn", "accesses": ["update_least_loaded_host"]},
            {"id": "td_txn", "accesses": ["evaluate_traffic", "record_activity"]},
            {"id": "ps_txn", "accesses": ["check_likelihood", "update_likelihood"]}
        ],
        "vnfs": [
            {"id": "firewall", "per_flow_udf": "firewall",
             "params": {"blocked_src": ["10.0.0.13", "10.0.0.42"], "blocked_ports": [23], "max_packets": 40}},
            {"id": "load balancer", "txns": ["lb_txn"], "per_flow_udf": "lb", "cross_flow_udf": "lb"},
            {"id": "trojan detector", "txns": ["td_txn"], "per_flow_udf": "trojan", "cross_flow_udf": "trojan"},
            {"id": "portscan detector", "txns": ["ps_txn"], "per_flow_udf": "portscan", "cross_flow_udf": "portscan",
             "params": {"theta": 3}}
        ],
        "topology": [
            {"vnf": "firewall", "stage": 1, "parallelism": shape.firewall},
            {"vnf": "load balancer", "parent": "firewall", "stage": 2, "parallelism": shape.load_balancer},
            {"vnf": "trojan detector", "parent": "load balancer", "stage": 3, "parallelism": shape.trojan},
            {"vnf": "portscan detector", "parent": "load balancer", "stage": 3, "parallelism": shape.portscan}
        ],
        "input": {"address": "10.0.0.1", "port": 9000, "protocol": "udp"},
        "output": {"address": "10.0.0.2", "port": 9001, "protocol": "udp"}
    })
}

/// NAT → load balancer → trojan detector.
pub fn nat_chain_doc(nat: u32, load_balancer: u32, trojan: u32) -> Value {
    json!({
        "name": "nat chain",
        "states": [
            {"id": "available_ports", "key": "pool", "fields": [{"name": "free", "kind": "ints"}]},
            {"id": "port_mapping", "key": "flow", "fields": ["port", "packets"]},
            {"id": "host_load", "key": "cluster", "fields": host_fields()},
            {"id": "request_history", "key": "host", "fields": [{"name": "history", "kind": "tokens"}]}
        ],
        "accesses": [
            {"id": "allocate_port", "states": ["available_ports"], "type": "W"},
            {"id": "record_mapping", "states": ["port_mapping", "available_ports"], "type": "W"},
            {"id": "update_least_loaded_host", "states": ["host_load"], "type": "W"},
            {"id": "evaluate_traffic", "states": ["request_history"], "type": "R"},
            {"id": "record_activity", "states": ["request_history"], "type": "W"}
        ],
        "transactions": [
            {"id": "nat_txn", "accesses": ["allocate_port", "record_mapping"]},
            {"id": "lb_txn", "accesses": ["update_least_loaded_host"]},
            {"id": "td_txn", "accesses": ["evaluate_traffic", "record_activity"]}
        ],
        "vnfs": [
            {"id": "nat", "txns": ["nat_txn"], "per_flow_udf": "nat", "cross_flow_udf": "nat",
             "params": {"first_port": 20000, "port_count": 48}},
            {"id": "load balancer", "txns": ["lb_txn"], "per_flow_udf": "lb", "cross_flow_udf": "lb"},
            {"id": "trojan detector", "txns": ["td_txn"], "per_flow_udf": "trojan", "cross_flow_udf": "trojan"}
        ],
        "topology": [
            {"vnf": "nat", "stage": 1, "parallelism": nat},
            {"vnf": "load balancer", "parent": "nat", "stage": 2, "parallelism": load_balancer},
            {"vnf": "trojan detector", "parent": "load balancer", "stage": 3, "parallelism": trojan}
        ]
    })
}

/// A lone trojan detector.
pub fn trojan_job_doc(parallelism: u32) -> Value {
    json!({
        "name": "trojan detector",
        "states": [{"id": "request_history", "key": "host", "fields": [{"name": "history", "kind": "tokens"}]}],
        "accesses": [
            {"id": "evaluate_traffic", "states": ["request_history"], "type": "R"},
            {"id": "record_activity", "states": ["request_history"], "type": "W"}
        ],
        "transactions": [{"id": "td_txn", "accesses": ["evaluate_traffic", "record_activity"]}],
        "vnfs": [{"id": "trojan detector", "txns": ["td_txn"], "per_flow_udf": "trojan", "cross_flow_udf": "trojan"}],
        "topology": [{"vnf": "trojan detector", "stage": 1, "parallelism": parallelism}]
    })
}

pub fn load_doc(doc: &Value) -> Result<ValidatedJob, LoadError> {
    ValidatedJob::from_json(&doc.to_string())
}

pub fn reference_chain(shape: ChainShape) -> ValidatedJob {
    load_doc(&reference_chain_doc(shape)).expect("reference chain validates")
}

pub fn nat_chain(nat: u32, load_balancer: u32, trojan: u32) -> ValidatedJob {
    load_doc(&nat_chain_doc(nat, load_balancer, trojan)).expect("nat chain validates")
}

pub fn trojan_job(parallelism: u32) -> ValidatedJob {
    load_doc(&trojan_job_doc(parallelism)).expect("trojan job validates")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_chain_has_four_vnfs_over_three_stages() {
        let job = reference_chain(ChainShape::default());
        assert_eq!(job.vnfs.len(), 4);
        let stages: Vec<u32> = job.vnfs.iter().map(|v| job.stage_of(&v.vnf_id).unwrap()).collect();
        assert_eq!(stages, vec![1, 2, 3, 3]);
        assert_eq!(job.children_of("load balancer"), vec!["trojan detector", "portscan detector"]);
    }

    #[test]
    fn other_docs_validate() {
        nat_chain(2, 2, 2);
        trojan_job(4);
    }
}
