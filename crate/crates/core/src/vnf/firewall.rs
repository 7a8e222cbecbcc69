// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use super::{PacketEvent, Params, PerFlowAction, Vnf, VnfError};
use crate::value::{FieldMap, Scalar};

/// Stateful firewall working purely on per-flow local state.
///
/// The verdict of a flow is fixed by its first packet; afterwards only the
/// stored verdict and the packet counter are consulted.
#[derive(Debug, Clone, Default)]
pub struct Firewall {
    pub blocked_src: BTreeSet<String>,
    pub blocked_ports: BTreeSet<u16>,
    /// Drop packets of a flow beyond this many.
    pub max_packets: Option<i64>,
}

impl Firewall {
    pub(crate) fn from_params(p: &Params<'_>) -> Result<Self, VnfError> {
        let blocked_src = p.strings("blocked_src")?.unwrap_or_default().into_iter().collect();
        let blocked_ports = p
            .ints("blocked_ports")?
            .unwrap_or_default()
            .into_iter()
            .map(|v| u16::try_from(v).map_err(|_| p.bad("blocked_ports", "port out of range")))
            .collect::<Result<_, _>>()?;
        Ok(Firewall { blocked_src, blocked_ports, max_packets: p.opt_int("max_packets")? })
    }

    fn policy_allows(&self, event: &PacketEvent) -> bool {
        !self.blocked_src.contains(&event.flow.src) && !self.blocked_ports.contains(&event.flow.dst_port)
    }
}

impl Vnf for Firewall {
    fn per_flow(&self, event: &PacketEvent, local: &mut FieldMap) -> PerFlowAction {
        let verdict = match local.get("verdict").and_then(Scalar::as_str) {
            Some(v) => v.to_owned(),
            None => {
                let v = if self.policy_allows(event) { "pass" } else { "drop" };
                local.insert("verdict".into(), Scalar::Str(v.into()));
                v.to_owned()
            }
        };
        let packets = local.get("packets").and_then(Scalar::as_int).unwrap_or(0) + 1;
        local.insert("packets".into(), Scalar::Int(packets));
        if verdict == "drop" {
            return PerFlowAction::Drop(format!("policy pkt={packets}"));
        }
        if self.max_packets.is_some_and(|m| packets > m) {
            return PerFlowAction::Drop(format!("rate pkt={packets}"));
        }
        PerFlowAction::Forward(format!("pkt={packets}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vnf::{ConnectionFlag, FlowKey, RequestKind};

    fn ev(src: &str, port: u16) -> PacketEvent {
        PacketEvent {
            id: 0,
            flow: FlowKey::new(src, "10.0.0.9", 4000, port, "tcp"),
            host: "h1".into(),
            request_kind: RequestKind::Other,
            flag: ConnectionFlag::New,
            bytes: 100,
        }
    }

    #[test]
    fn blocklisted_flow_is_dropped() {
        let fw = Firewall { blocked_src: ["6.6.6.6".to_owned()].into(), ..Default::default() };
        let mut local = FieldMap::new();
        assert!(matches!(fw.per_flow(&ev("6.6.6.6", 80), &mut local), PerFlowAction::Drop(_)));
    }

    #[test]
    fn unknown_flow_passes_and_is_initialized() {
        let fw = Firewall::default();
        let mut local = FieldMap::new();
        assert_eq!(fw.per_flow(&ev("1.1.1.1", 80), &mut local), PerFlowAction::Forward("pkt=1".into()));
        assert_eq!(local.get("verdict"), Some(&Scalar::Str("pass".into())));
        assert_eq!(local.get("packets"), Some(&Scalar::Int(1)));
    }

    #[test]
    fn replay_gives_identical_verdicts() {
        let fw = Firewall { blocked_ports: [23].into(), max_packets: Some(3), ..Default::default() };
        let events: Vec<PacketEvent> =
            (0..20).map(|i| ev(&format!("1.1.1.{}", i % 3), if i % 4 == 0 { 23 } else { 80 })).collect();
        let run = || {
            let mut locals = std::collections::BTreeMap::<String, FieldMap>::new();
            events
                .iter()
                .map(|e| fw.per_flow(e, locals.entry(e.flow.id()).or_default()))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
