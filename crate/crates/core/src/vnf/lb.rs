// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;

use super::{ConnectionFlag, PacketEvent, Params, PerFlowAction, TxnCall, Vnf, VnfError};
use crate::executor::{CrossFlowUdf, DataHolder, TxnOutcome, TxnStatus, UdfError};
use crate::job::ValidatedJob;
use crate::value::{FieldMap, Scalar};

/// All host loads live in one record under this key, one field per host,
/// so choosing the least-loaded host is a single read.
pub const CLUSTER_KEY: &str = "cluster";

/// Load balancer. A new connection is routed to the least-loaded host;
/// the chosen host and the connection's byte count are kept in the flow's
/// local state and reused for the rest of the connection.
#[derive(Debug, Clone)]
pub struct LoadBalancer {
    pub hosts: Vec<String>,
}

impl LoadBalancer {
    pub(crate) fn from_params(p: &Params<'_>, job: &ValidatedJob) -> Result<Self, VnfError> {
        let hosts = match p.strings("hosts")? {
            Some(h) => h,
            None => job
                .schema("host_load")
                .map(|s| s.fields.iter().map(|f| f.name.clone()).collect())
                .unwrap_or_default(),
        };
        if let Some(schema) = job.schema("host_load") {
            if let Some(h) = hosts.iter().find(|h| schema.field(h).is_none()) {
                return Err(p.bad("hosts", &format!("`{h}` is not a field of host_load")));
            }
        }
        Ok(LoadBalancer { hosts })
    }
}

/// Least-loaded host among `hosts`; ties go to the smallest host id.
pub fn least_loaded<'a>(loads: &FieldMap, hosts: &'a [String]) -> Option<&'a str> {
    hosts
        .iter()
        .map(|h| (loads.get(h).and_then(Scalar::as_int).unwrap_or(0), h.as_str()))
        .min()
        .map(|(_, h)| h)
}

impl Vnf for LoadBalancer {
    fn per_flow(&self, event: &PacketEvent, local: &mut FieldMap) -> PerFlowAction {
        let host = local.get("host").and_then(Scalar::as_str).map(str::to_owned);
        match (event.flag, host) {
            (ConnectionFlag::New, None) => {
                PerFlowAction::Transact(TxnCall::new("lb_txn").key("update_least_loaded_host", &[CLUSTER_KEY]))
            }
            (_, Some(host)) => {
                let bytes = local.get("bytes").and_then(Scalar::as_int).unwrap_or(0) + event.bytes;
                local.insert("bytes".into(), Scalar::Int(bytes));
                PerFlowAction::Forward(format!("host={host} bytes={bytes}"))
            }
            // Failed handshakes carry no connection; they still reach the
            // detectors downstream.
            (ConnectionFlag::Failed, None) => PerFlowAction::Forward("unrouted".into()),
            (ConnectionFlag::Continuing, None) => PerFlowAction::Drop("no connection".into()),
        }
    }

    fn cross_flow(&self) -> Option<Arc<dyn CrossFlowUdf>> {
        let hosts = self.hosts.clone();
        Some(Arc::new(move |h: &mut DataHolder<'_>| lb_cross_flow(h, &hosts)))
    }

    fn on_outcome(&self, event: &PacketEvent, outcome: &TxnOutcome, local: &mut FieldMap) -> String {
        match (outcome.status, outcome.results.get("host").and_then(Scalar::as_str)) {
            (TxnStatus::Committed, Some(host)) => {
                local.insert("host".into(), Scalar::Str(host.to_owned()));
                local.insert("bytes".into(), Scalar::Int(event.bytes));
                format!("host={host} bytes={}", event.bytes)
            }
            _ => outcome.reason.clone().unwrap_or_default(),
        }
    }
}

/// Routes one new connection: load+1 on the least-loaded host.
pub fn lb_cross_flow(holder: &mut DataHolder<'_>, hosts: &[String]) -> Result<(), UdfError> {
    let loads = holder.get_state("host_load")?;
    let Some(host) = least_loaded(loads, hosts).map(str::to_owned) else {
        holder.abort_txn("NoHostsRegistered");
        return Ok(());
    };
    let load = loads.get(&host).and_then(Scalar::as_int).unwrap_or(0);
    holder.set_state_field("host_load", &host, Scalar::Int(load + 1))?;
    holder.set_result("host", Scalar::Str(host));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loads(pairs: &[(&str, i64)]) -> (FieldMap, Vec<String>) {
        (
            pairs.iter().map(|(h, l)| ((*h).to_owned(), Scalar::Int(*l))).collect(),
            pairs.iter().map(|(h, _)| (*h).to_owned()).collect(),
        )
    }

    #[test]
    fn argmin_and_tie_break() {
        let (m, hs) = loads(&[("h1", 3), ("h2", 1), ("h3", 2)]);
        assert_eq!(least_loaded(&m, &hs), Some("h2"));
        let (m, hs) = loads(&[("h2", 1), ("h1", 1)]);
        assert_eq!(least_loaded(&m, &hs), Some("h1"));
        assert_eq!(least_loaded(&m, &[]), None);
    }
}
