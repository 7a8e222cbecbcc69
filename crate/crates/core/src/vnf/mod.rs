// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Reference network functions.
//!
//! A VNF splits its logic into a per-flow part, which runs on the instance
//! that owns the flow against that instance's local memory, and an optional
//! cross-flow part, which runs inside a transaction against shared state.

mod firewall;
mod ids;
mod kv;
mod lb;
mod chains;
pub mod modular;
mod nat;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chains::{
    load_doc, nat_chain, nat_chain_doc, reference_chain, reference_chain_doc, trojan_job, trojan_job_doc, ChainShape,
    BACKEND_HOSTS,
};
pub use firewall::Firewall;
pub use ids::{contains_pattern, portscan_cross_flow, trojan_cross_flow, MatchMode, PortscanDetector, TrojanDetector, DEFAULT_PORTSCAN_THETA};
pub use kv::{kv_cross_flow, kv_job, KvOp, KvStore, KV_MODULUS};
pub use lb::{lb_cross_flow, least_loaded, LoadBalancer, CLUSTER_KEY};
pub use nat::{nat_cross_flow, Nat, POOL_KEY};

use crate::executor::{CrossFlowUdf, TxnOutcome};
use crate::job::{ValidatedJob, VnfDefinition};
use crate::store::{StoreError, VersionedStore};
use crate::value::{stable_hash, FieldMap, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src: String,
    pub dst: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: String,
}

impl FlowKey {
    pub fn new(src: &str, dst: &str, src_port: u16, dst_port: u16, protocol: &str) -> Self {
        FlowKey {
            src: src.to_owned(),
            dst: dst.to_owned(),
            src_port,
            dst_port,
            protocol: protocol.to_owned(),
        }
    }

    /// Canonical string form, also used as the flow's state key.
    pub fn id(&self) -> String {
        format!("{}:{}>{}:{}/{}", self.src, self.src_port, self.dst, self.dst_port, self.protocol)
    }

    pub fn hash(&self) -> u64 {
        stable_hash(self.id().as_bytes())
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RequestKind {
    #[serde(rename = "SSH")]
    Ssh,
    #[serde(rename = "HTTP_DL")]
    HttpDl,
    #[serde(rename = "FTP_DL")]
    FtpDl,
    #[serde(rename = "IRC")]
    Irc,
    #[serde(rename = "OTHER")]
    Other,
}

impl RequestKind {
    pub const ALL: [RequestKind; 5] =
        [RequestKind::Ssh, RequestKind::HttpDl, RequestKind::FtpDl, RequestKind::Irc, RequestKind::Other];

    pub fn token(self) -> &'static str {
        match self {
            RequestKind::Ssh => "SSH",
            RequestKind::HttpDl => "HTTP_DL",
            RequestKind::FtpDl => "FTP_DL",
            RequestKind::Irc => "IRC",
            RequestKind::Other => "OTHER",
        }
    }
}

impl FromStr for RequestKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RequestKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| format!("unknown request kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConnectionFlag {
    New,
    Continuing,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketEvent {
    /// Position in the input stream; unique per run.
    pub id: u64,
    pub flow: FlowKey,
    pub host: String,
    pub request_kind: RequestKind,
    pub flag: ConnectionFlag,
    pub bytes: i64,
}

/// Name of the `i`-th host or key in generated traffic.
pub fn host_name(i: usize) -> String {
    format!("h{i}")
}

/// A transaction a per-flow UDF asks the engine to run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TxnCall {
    pub txn_id: String,
    pub packet_data: FieldMap,
    pub target_keys: BTreeMap<String, Vec<String>>,
}

impl TxnCall {
    pub fn new(txn_id: &str) -> Self {
        TxnCall { txn_id: txn_id.to_owned(), ..Default::default() }
    }

    pub fn key(mut self, access_id: &str, keys: &[&str]) -> Self {
        self.target_keys.insert(access_id.to_owned(), keys.iter().map(|k| (*k).to_owned()).collect());
        self
    }

    pub fn data(mut self, field: &str, value: impl Into<Scalar>) -> Self {
        self.packet_data.insert(field.to_owned(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PerFlowAction {
    /// Hand the packet to the child stages; `detail` annotates the output.
    Forward(String),
    Drop(String),
    Transact(TxnCall),
}

/// Per-flow and cross-flow logic of one VNF.
pub trait Vnf: Send + Sync {
    /// Runs on the owning instance. `local` is the flow's record in that
    /// instance's memory; it starts empty.
    fn per_flow(&self, event: &PacketEvent, local: &mut FieldMap) -> PerFlowAction;

    fn cross_flow(&self) -> Option<Arc<dyn CrossFlowUdf>> {
        None
    }

    /// Delivers the outcome of a requested transaction once its stage has
    /// committed. Returns the output annotation.
    fn on_outcome(&self, _event: &PacketEvent, outcome: &TxnOutcome, _local: &mut FieldMap) -> String {
        outcome.reason.clone().unwrap_or_default()
    }

    /// Writes the VNF's initial shared state at seq 0.
    fn seed(&self, _store: &mut VersionedStore) -> Result<(), StoreError> {
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VnfError {
    #[error("VNF `{vnf}` names unknown built-in UDF `{udf}`")]
    UnknownUdf { vnf: String, udf: String },
    #[error("VNF `{vnf}`: cross-flow UDF `{cross}` does not belong to `{per_flow}`")]
    MismatchedUdf { vnf: String, per_flow: String, cross: String },
    #[error("VNF `{vnf}`: bad parameter `{param}`: {reason}")]
    BadParam { vnf: String, param: String, reason: String },
}

/// Names accepted for `per_flow_udf` / `cross_flow_udf`.
pub const BUILTIN_UDFS: [&str; 6] = ["firewall", "nat", "lb", "trojan", "portscan", "kv"];

/// Instantiates the built-in VNF named by `def`.
pub fn build_vnf(def: &VnfDefinition, job: &ValidatedJob) -> Result<Arc<dyn Vnf>, VnfError> {
    if let Some(cross) = &def.cross_flow_udf {
        if cross != &def.per_flow_udf {
            return Err(VnfError::MismatchedUdf {
                vnf: def.vnf_id.clone(),
                per_flow: def.per_flow_udf.clone(),
                cross: cross.clone(),
            });
        }
    }
    let p = Params { vnf: &def.vnf_id, value: &def.params };
    let vnf: Arc<dyn Vnf> = match def.per_flow_udf.as_str() {
        "firewall" => Arc::new(Firewall::from_params(&p)?),
        "nat" => Arc::new(Nat::from_params(&p)?),
        "lb" => Arc::new(LoadBalancer::from_params(&p, job)?),
        "trojan" => Arc::new(TrojanDetector::from_params(&p)?),
        "portscan" => Arc::new(PortscanDetector::from_params(&p)?),
        "kv" => Arc::new(KvStore::from_params(&p)?),
        other => return Err(VnfError::UnknownUdf { vnf: def.vnf_id.clone(), udf: other.to_owned() }),
    };
    Ok(vnf)
}

/// Typed access to a VNF's JSON parameters.
pub(crate) struct Params<'a> {
    pub vnf: &'a str,
    pub value: &'a serde_json::Value,
}

impl Params<'_> {
    fn bad(&self, param: &str, reason: &str) -> VnfError {
        VnfError::BadParam { vnf: self.vnf.to_owned(), param: param.to_owned(), reason: reason.to_owned() }
    }

    fn get(&self, name: &str) -> Option<&serde_json::Value> {
        self.value.get(name).filter(|v| !v.is_null())
    }

    pub fn int(&self, name: &str, default: i64) -> Result<i64, VnfError> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v.as_i64().ok_or_else(|| self.bad(name, "expected an integer")),
        }
    }

    pub fn opt_int(&self, name: &str) -> Result<Option<i64>, VnfError> {
        self.get(name).map(|v| v.as_i64().ok_or_else(|| self.bad(name, "expected an integer"))).transpose()
    }

    pub fn str(&self, name: &str, default: &str) -> Result<String, VnfError> {
        match self.get(name) {
            None => Ok(default.to_owned()),
            Some(v) => v.as_str().map(str::to_owned).ok_or_else(|| self.bad(name, "expected a string")),
        }
    }

    pub fn strings(&self, name: &str) -> Result<Option<Vec<String>>, VnfError> {
        let Some(v) = self.get(name) else { return Ok(None) };
        let arr = v.as_array().ok_or_else(|| self.bad(name, "expected a list of strings"))?;
        arr.iter()
            .map(|x| x.as_str().map(str::to_owned).ok_or_else(|| self.bad(name, "expected a list of strings")))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    pub fn ints(&self, name: &str) -> Result<Option<Vec<i64>>, VnfError> {
        let Some(v) = self.get(name) else { return Ok(None) };
        let arr = v.as_array().ok_or_else(|| self.bad(name, "expected a list of integers"))?;
        arr.iter()
            .map(|x| x.as_i64().ok_or_else(|| self.bad(name, "expected a list of integers")))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}
