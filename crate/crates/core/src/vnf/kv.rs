// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Synthetic key-value VNF used to drive the engine with controllable skew,
//! read ratio, dependency mix and per-transaction compute cost.

use std::hint::black_box;
use std::sync::Arc;

use super::{host_name, PacketEvent, Params, PerFlowAction, RequestKind, TxnCall, Vnf, VnfError};
use crate::executor::{CrossFlowUdf, DataHolder, TxnOutcome, TxnStatus, UdfError};
use crate::job::{
    AccessScope, FieldDef, JobBuilder, StateAccessTemplate, StateSchema, TopologyNode, TransactionTemplate,
    ValidatedJob, VnfDefinition,
};
use crate::store::{StateKey, StoreError, VersionedStore};
use crate::tpg::TransactionRequest;
use crate::value::{FieldMap, Scalar};

/// Updates are affine maps modulo this prime, so their order matters.
pub const KV_MODULUS: i64 = 1_000_000_007;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KvOp {
    Read { key: String },
    /// `val = val * 3 + delta (mod KV_MODULUS)`.
    Update { key: String, delta: i64 },
    /// Moves `amount` from `from` to `to`; aborts on insufficient funds.
    /// A transfer onto the same key commits without a write.
    Transfer { from: String, to: String, amount: i64 },
    /// `to.val = from.val * 7 + 1 (mod KV_MODULUS)`, reading `from` first.
    Copy { from: String, to: String },
}

impl KvOp {
    /// Event → operation: SSH and IRC read the host key, OTHER updates it,
    /// HTTP_DL transfers `bytes` from the host key to the destination key,
    /// FTP_DL copies the host key into the destination key.
    pub fn from_event(event: &PacketEvent) -> KvOp {
        let key = event.host.clone();
        let other = event.flow.dst.clone();
        match event.request_kind {
            RequestKind::Ssh | RequestKind::Irc => KvOp::Read { key },
            RequestKind::Other => KvOp::Update { key, delta: event.bytes },
            RequestKind::HttpDl => KvOp::Transfer { from: key, to: other, amount: event.bytes },
            RequestKind::FtpDl => KvOp::Copy { from: key, to: other },
        }
    }

    pub fn call(&self, work: i64) -> TxnCall {
        let call = match self {
            KvOp::Read { key } => TxnCall::new("kv_read").key("get", &[key]),
            KvOp::Update { key, delta } => TxnCall::new("kv_update").key("put", &[key]).data("delta", *delta),
            KvOp::Transfer { from, to, amount } => TxnCall::new("kv_transfer")
                .key("debit", &[from])
                .key("credit", &[to, from])
                .data("amount", *amount),
            KvOp::Copy { from, to } => TxnCall::new("kv_copy").key("get", &[from]).key("put_from", &[to, from]),
        };
        if work > 0 {
            call.data("work", work)
        } else {
            call
        }
    }

    pub fn request(&self, seq: u64, vnf_id: &str, work: i64) -> TransactionRequest {
        let call = self.call(work);
        TransactionRequest {
            seq,
            vnf_id: vnf_id.to_owned(),
            instance_id: 0,
            txn_id: call.txn_id,
            packet_data: call.packet_data,
            target_keys: call.target_keys,
        }
    }
}

fn burn(iterations: i64) {
    let mut x: u64 = 0x9e37_79b9_7f4a_7c15;
    for _ in 0..iterations {
        x = black_box(x.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407));
    }
    black_box(x);
}

fn val(holder: &DataHolder<'_>, access: &str) -> Result<i64, UdfError> {
    Ok(holder.get_field(access, "kv", "val")?.as_int().unwrap_or(0))
}

pub fn kv_cross_flow(holder: &mut DataHolder<'_>) -> Result<(), UdfError> {
    if let Ok(w) = holder.get_packet_data("work") {
        burn(w.as_int().unwrap_or(0));
    }
    let int_data = |h: &DataHolder<'_>, name: &str| -> Result<i64, UdfError> {
        h.get_packet_data(name)?.as_int().ok_or_else(|| UdfError::Failed(format!("{name} must be an integer")))
    };
    match holder.template().txn_id.as_str() {
        "kv_read" => {
            let v = val(holder, "get")?;
            holder.set_result("val", Scalar::Int(v));
        }
        "kv_update" => {
            let delta = int_data(holder, "delta")?;
            let v = (val(holder, "put")? * 3 + delta).rem_euclid(KV_MODULUS);
            holder.set_field("put", "val", Scalar::Int(v))?;
            holder.set_result("val", Scalar::Int(v));
        }
        "kv_transfer" => {
            let amount = int_data(holder, "amount")?;
            let src = val(holder, "debit")?;
            if src < amount {
                holder.abort_txn("insufficient funds");
                return Ok(());
            }
            let req = holder.request();
            if req.target_keys.get("debit").and_then(|k| k.first()) == req.target_keys.get("credit").and_then(|k| k.first()) {
                // moving funds onto the same key changes nothing
                return Ok(());
            }
            holder.set_field("debit", "val", Scalar::Int(src - amount))?;
            let dst = val(holder, "credit")?;
            holder.set_field("credit", "val", Scalar::Int(dst + amount))?;
        }
        "kv_copy" => {
            let v = (val(holder, "get")? * 7 + 1).rem_euclid(KV_MODULUS);
            holder.set_field("put_from", "val", Scalar::Int(v))?;
            holder.set_result("val", Scalar::Int(v));
        }
        other => return Err(UdfError::Failed(format!("unknown kv transaction `{other}`"))),
    }
    Ok(())
}

/// Synthetic key-value VNF.
#[derive(Debug, Clone, Default)]
pub struct KvStore {
    /// Busy-loop iterations per transaction.
    pub work: i64,
    /// Keys `h0..h{n}` seeded with `initial_balance`.
    pub seed_keys: i64,
    pub initial_balance: i64,
}

impl KvStore {
    pub(crate) fn from_params(p: &Params<'_>) -> Result<Self, VnfError> {
        Ok(KvStore {
            work: p.int("work", 0)?,
            seed_keys: p.int("seed_keys", 0)?,
            initial_balance: p.int("initial_balance", 0)?,
        })
    }
}

impl Vnf for KvStore {
    fn per_flow(&self, event: &PacketEvent, _local: &mut FieldMap) -> PerFlowAction {
        PerFlowAction::Transact(KvOp::from_event(event).call(self.work))
    }

    fn cross_flow(&self) -> Option<Arc<dyn CrossFlowUdf>> {
        Some(Arc::new(kv_cross_flow))
    }

    fn on_outcome(&self, _event: &PacketEvent, outcome: &TxnOutcome, _local: &mut FieldMap) -> String {
        match (outcome.status, outcome.results.get("val")) {
            (TxnStatus::Committed, Some(v)) => format!("val={v}"),
            (TxnStatus::Committed, None) => String::new(),
            _ => outcome.reason.clone().unwrap_or_default(),
        }
    }

    fn seed(&self, store: &mut VersionedStore) -> Result<(), StoreError> {
        for i in 0..self.seed_keys.max(0) {
            let record = FieldMap::from([("val".to_owned(), Scalar::Int(self.initial_balance))]);
            store.write_at(StateKey::new("kv", host_name(i as usize)), 0, record)?;
        }
        Ok(())
    }
}

/// Single-stage job around the synthetic key-value VNF.
pub fn kv_job(params: serde_json::Value) -> ValidatedJob {
    let mut b = JobBuilder::new("kv");
    let built: Result<(), crate::job::JobError> = (|| {
        b.define_state(StateSchema::new("kv", "key", vec![FieldDef::int("val")], AccessScope::CrossFlow))?;
        b.define_access(StateAccessTemplate::read("get", "kv"))?;
        b.define_access(StateAccessTemplate::write("put", &["kv"]))?;
        b.define_access(StateAccessTemplate::write("debit", &["kv"]))?;
        b.define_access(StateAccessTemplate::write("credit", &["kv", "kv"]))?;
        b.define_access(StateAccessTemplate::write("put_from", &["kv", "kv"]))?;
        b.define_transaction(TransactionTemplate::new("kv_read", &["get"]))?;
        b.define_transaction(TransactionTemplate::new("kv_update", &["put"]))?;
        b.define_transaction(TransactionTemplate::new("kv_transfer", &["debit", "credit"]))?;
        b.define_transaction(TransactionTemplate::new("kv_copy", &["get", "put_from"]))?;
        b.define_vnf(
            VnfDefinition::transactional("kv", &["kv_read", "kv_update", "kv_transfer", "kv_copy"], "kv", "kv")
                .with_params(params),
        )?;
        b.define_topology(TopologyNode::new("kv", None, 1, 1))?;
        Ok(())
    })();
    built.expect("kv job declarations are consistent");
    b.validate().expect("kv job validates")
}
