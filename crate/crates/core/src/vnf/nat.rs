// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;

use super::{ConnectionFlag, PacketEvent, Params, PerFlowAction, TxnCall, Vnf, VnfError};
use crate::executor::{CrossFlowUdf, DataHolder, TxnOutcome, TxnStatus, UdfError};
use crate::store::{StateKey, StoreError, VersionedStore};
use crate::value::{FieldMap, Scalar};

pub const POOL_KEY: &str = "pool";

/// Source NAT. New connections take the lowest free port from a shared
/// pool; the mapping is recorded centrally and cached in the flow's local
/// state for the rest of the connection.
#[derive(Debug, Clone)]
pub struct Nat {
    pub first_port: i64,
    pub port_count: i64,
}

impl Nat {
    pub(crate) fn from_params(p: &Params<'_>) -> Result<Self, VnfError> {
        let first_port = p.int("first_port", 1000)?;
        let port_count = p.int("port_count", 64)?;
        if port_count < 0 {
            return Err(p.bad("port_count", "must be non-negative"));
        }
        Ok(Nat { first_port, port_count })
    }
}

/// Pops the lowest free port, records the mapping and bumps the flow's
/// packet count; aborts when the pool is empty.
pub fn nat_cross_flow(holder: &mut DataHolder<'_>) -> Result<(), UdfError> {
    let free = holder.get_state_field("available_ports", "free")?.as_ints().unwrap_or(&[]).to_vec();
    let Some(&port) = free.iter().min() else {
        holder.notify("PortExhausted");
        holder.abort_txn("PortExhausted");
        return Ok(());
    };
    let rest: Vec<i64> = free.into_iter().filter(|&p| p != port).collect();
    let packets = holder.get_field("record_mapping", "port_mapping", "packets")?.as_int().unwrap_or(0);
    holder.set_field("allocate_port", "free", Scalar::Ints(rest))?;
    holder.set_field("record_mapping", "port", Scalar::Int(port))?;
    holder.set_field("record_mapping", "packets", Scalar::Int(packets + 1))?;
    holder.set_result("port", Scalar::Int(port));
    Ok(())
}

impl Vnf for Nat {
    fn per_flow(&self, event: &PacketEvent, local: &mut FieldMap) -> PerFlowAction {
        match (event.flag, local.get("port").and_then(Scalar::as_int)) {
            (ConnectionFlag::New, None) => {
                let flow = event.flow.id();
                PerFlowAction::Transact(
                    TxnCall::new("nat_txn")
                        .key("allocate_port", &[POOL_KEY])
                        .key("record_mapping", &[&flow, POOL_KEY]),
                )
            }
            (_, Some(port)) => PerFlowAction::Forward(format!("port={port}")),
            (_, None) => PerFlowAction::Drop("no mapping".into()),
        }
    }

    fn cross_flow(&self) -> Option<Arc<dyn CrossFlowUdf>> {
        Some(Arc::new(nat_cross_flow))
    }

    fn on_outcome(&self, _event: &PacketEvent, outcome: &TxnOutcome, local: &mut FieldMap) -> String {
        match (outcome.status, outcome.results.get("port")) {
            (TxnStatus::Committed, Some(port)) => {
                local.insert("port".into(), port.clone());
                format!("port={port}")
            }
            _ => outcome.reason.clone().unwrap_or_default(),
        }
    }

    fn seed(&self, store: &mut VersionedStore) -> Result<(), StoreError> {
        let ports: Vec<i64> = (self.first_port..self.first_port + self.port_count).collect();
        let mut record = store.read_at(&StateKey::new("available_ports", POOL_KEY), 1)?;
        record.insert("free".into(), Scalar::Ints(ports));
        store.write_at(StateKey::new("available_ports", POOL_KEY), 0, record)
    }
}
