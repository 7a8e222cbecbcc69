// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Intrusion detectors sharing state across flows: a trojan detector over
//! per-host request histories and a portscan detector over per-source
//! failure scores.

use std::sync::Arc;

use super::{ConnectionFlag, PacketEvent, Params, PerFlowAction, RequestKind, TxnCall, Vnf, VnfError};
use crate::executor::{CrossFlowUdf, DataHolder, TxnOutcome, TxnStatus, UdfError};
use crate::value::{FieldMap, Scalar};

pub const DEFAULT_PORTSCAN_THETA: i64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    /// Pattern tokens appear in order, possibly with gaps.
    Subsequence,
    /// Pattern tokens appear back to back.
    Contiguous,
}

pub fn contains_pattern(history: &[String], pattern: &[String], mode: MatchMode) -> bool {
    if pattern.is_empty() {
        return false;
    }
    match mode {
        MatchMode::Subsequence => {
            let mut want = pattern.iter();
            let mut next = want.next();
            for tok in history {
                if next == Some(tok) {
                    next = want.next();
                    if next.is_none() {
                        return true;
                    }
                }
            }
            false
        }
        MatchMode::Contiguous => history.windows(pattern.len()).any(|w| w == pattern),
    }
}

/// Raises an alarm when a host's request history, extended by the new
/// request, contains the malicious pattern.
#[derive(Debug, Clone)]
pub struct TrojanDetector {
    pub pattern: Vec<String>,
    pub mode: MatchMode,
}

impl TrojanDetector {
    pub fn new(pattern: &[RequestKind], mode: MatchMode) -> Self {
        TrojanDetector { pattern: pattern.iter().map(|k| k.token().to_owned()).collect(), mode }
    }

    pub(crate) fn from_params(p: &Params<'_>) -> Result<Self, VnfError> {
        let pattern = p.strings("pattern")?.unwrap_or_else(|| {
            [RequestKind::Ssh, RequestKind::HttpDl, RequestKind::FtpDl, RequestKind::Irc]
                .iter()
                .map(|k| k.token().to_owned())
                .collect()
        });
        if pattern.is_empty() {
            return Err(p.bad("pattern", "must not be empty"));
        }
        if let Some(bad) = pattern.iter().find(|t| t.parse::<RequestKind>().is_err()) {
            return Err(p.bad("pattern", &format!("unknown request kind `{bad}`")));
        }
        let mode = match p.str("mode", "subsequence")?.as_str() {
            "subsequence" => MatchMode::Subsequence,
            "contiguous" => MatchMode::Contiguous,
            _ => return Err(p.bad("mode", "expected `subsequence` or `contiguous`")),
        };
        Ok(TrojanDetector { pattern, mode })
    }
}

pub fn trojan_cross_flow(holder: &mut DataHolder<'_>, pattern: &[String], mode: MatchMode) -> Result<(), UdfError> {
    let mut history = holder.get_state_field("request_history", "history")?.as_tokens().unwrap_or(&[]).to_vec();
    let new_request = holder
        .get_packet_data("new_request")?
        .as_str()
        .ok_or_else(|| UdfError::Failed("new_request must be a string".into()))?
        .to_owned();
    history.push(new_request);
    if contains_pattern(&history, pattern, mode) {
        let host = holder.key_of("request_history")?.key;
        holder.notify(format!("alarm host={host}"));
        holder.abort_txn("malicious pattern");
        return Ok(());
    }
    holder.set_state_field("request_history", "history", Scalar::Tokens(history))
}

impl Vnf for TrojanDetector {
    fn per_flow(&self, event: &PacketEvent, _local: &mut FieldMap) -> PerFlowAction {
        PerFlowAction::Transact(
            TxnCall::new("td_txn")
                .key("evaluate_traffic", &[&event.host])
                .key("record_activity", &[&event.host])
                .data("new_request", event.request_kind.token()),
        )
    }

    fn cross_flow(&self) -> Option<Arc<dyn CrossFlowUdf>> {
        let pattern = self.pattern.clone();
        let mode = self.mode;
        Some(Arc::new(move |h: &mut DataHolder<'_>| trojan_cross_flow(h, &pattern, mode)))
    }
}

/// Additive failure score per source: +1 per failed connection, −1 per
/// successful new connection, never below zero. Reaching `theta` flags the
/// source.
#[derive(Debug, Clone)]
pub struct PortscanDetector {
    pub theta: i64,
}

impl PortscanDetector {
    pub(crate) fn from_params(p: &Params<'_>) -> Result<Self, VnfError> {
        Ok(PortscanDetector { theta: p.int("theta", DEFAULT_PORTSCAN_THETA)? })
    }
}

pub fn portscan_cross_flow(holder: &mut DataHolder<'_>, theta: i64) -> Result<(), UdfError> {
    let score = holder.get_state_field("portscan_likelihood", "likelihood")?.as_int().unwrap_or(0);
    let flag = holder.get_packet_data("flag")?.as_str().unwrap_or("");
    let next = match flag {
        "Failed" => score + 1,
        "New" => (score - 1).max(0),
        _ => score,
    };
    holder.set_state_field("portscan_likelihood", "likelihood", Scalar::Int(next))?;
    holder.set_result("likelihood", Scalar::Int(next));
    if next >= theta {
        let src = holder.key_of("portscan_likelihood")?.key;
        holder.notify(format!("portscan src={src}"));
    }
    Ok(())
}

impl Vnf for PortscanDetector {
    fn per_flow(&self, event: &PacketEvent, _local: &mut FieldMap) -> PerFlowAction {
        let flag = match event.flag {
            ConnectionFlag::New => "New",
            ConnectionFlag::Continuing => "Continuing",
            ConnectionFlag::Failed => "Failed",
        };
        PerFlowAction::Transact(
            TxnCall::new("ps_txn")
                .key("check_likelihood", &[&event.flow.src])
                .key("update_likelihood", &[&event.flow.src])
                .data("flag", flag),
        )
    }

    fn cross_flow(&self) -> Option<Arc<dyn CrossFlowUdf>> {
        let theta = self.theta;
        Some(Arc::new(move |h: &mut DataHolder<'_>| portscan_cross_flow(h, theta)))
    }

    fn on_outcome(&self, _event: &PacketEvent, outcome: &TxnOutcome, _local: &mut FieldMap) -> String {
        match (outcome.status, outcome.results.get("likelihood")) {
            (TxnStatus::Committed, Some(l)) => format!("score={l}"),
            _ => outcome.reason.clone().unwrap_or_default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| (*t).to_owned()).collect()
    }

    #[test]
    fn subsequence_and_contiguous() {
        let pattern = toks(&["SSH", "HTTP_DL", "FTP_DL", "IRC"]);
        let gapped = toks(&["SSH", "OTHER", "HTTP_DL", "FTP_DL", "OTHER", "IRC"]);
        assert!(contains_pattern(&gapped, &pattern, MatchMode::Subsequence));
        assert!(!contains_pattern(&gapped, &pattern, MatchMode::Contiguous));
        assert!(contains_pattern(&toks(&["OTHER", "SSH", "HTTP_DL", "FTP_DL", "IRC"]), &pattern, MatchMode::Contiguous));
        assert!(!contains_pattern(&toks(&["IRC", "FTP_DL", "HTTP_DL", "SSH"]), &pattern, MatchMode::Subsequence));
        assert!(!contains_pattern(&toks(&["SSH"]), &[], MatchMode::Subsequence));
    }
}
