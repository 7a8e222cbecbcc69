// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Deterministic synthetic traffic.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::vnf::{host_name, ConnectionFlag, FlowKey, PacketEvent, RequestKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficSpec {
    pub total_events: usize,
    pub batch_size: usize,
    /// Distinct hosts, which double as keys of the synthetic workload.
    pub key_count: usize,
    pub flow_count: usize,
    /// Zipf exponent of the host distribution; 0 is uniform.
    pub zipf_theta: f64,
    /// When set, the share of reading requests (SSH); the rest are drawn
    /// from the non-reading kinds by `kind_weights`.
    pub read_ratio: Option<f64>,
    /// Weights of SSH, HTTP_DL, FTP_DL, IRC, OTHER.
    pub kind_weights: [f64; 5],
    /// Probability that a flow's opening packet is a failed handshake.
    pub failed_ratio: f64,
    pub max_bytes: i64,
    /// `(batch index, multiplier)` pairs scaling individual batch sizes.
    pub burst: Vec<(usize, f64)>,
    pub seed: u64,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        TrafficSpec {
            total_events: 1000,
            batch_size: 100,
            key_count: 16,
            flow_count: 64,
            zipf_theta: 0.0,
            read_ratio: None,
            kind_weights: [1.0; 5],
            failed_ratio: 0.1,
            max_bytes: 100,
            burst: Vec::new(),
            seed: 1,
        }
    }
}

pub fn flow_key(i: usize, key_count: usize) -> FlowKey {
    let dst = host_name((i.wrapping_mul(7919) + 3) % key_count.max(1));
    FlowKey::new(
        &format!("10.{}.{}.{}", (i >> 16) & 0xff, (i >> 8) & 0xff, i & 0xff),
        &dst,
        10_000 + (i % 50_000) as u16,
        [80u16, 443, 22, 21][i % 4],
        "tcp",
    )
}

fn pick_weighted(rng: &mut ChaCha8Rng, kinds: &[RequestKind], weights: &[f64]) -> RequestKind {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return kinds[0];
    }
    let mut x = rng.random::<f64>() * total;
    for (k, w) in kinds.iter().zip(weights) {
        if x < *w {
            return *k;
        }
        x -= w;
    }
    kinds[kinds.len() - 1]
}

/// Same spec, same stream.
pub fn generate_traffic(spec: &TrafficSpec) -> Vec<PacketEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let keys = spec.key_count.max(1);
    let flows = spec.flow_count.max(1);
    let zipf = Zipf::new(keys as f64, spec.zipf_theta.max(0.0)).expect("n >= 1 and theta >= 0");
    let mut opened: HashSet<usize> = HashSet::new();
    let write_kinds = [RequestKind::HttpDl, RequestKind::FtpDl, RequestKind::Other];
    let write_weights = [spec.kind_weights[1], spec.kind_weights[2], spec.kind_weights[4]];
    (0..spec.total_events)
        .map(|id| {
            let host = host_name(zipf.sample(&mut rng) as usize - 1);
            let f = rng.random_range(0..flows);
            let request_kind = match spec.read_ratio {
                Some(r) if rng.random::<f64>() < r => RequestKind::Ssh,
                Some(_) => pick_weighted(&mut rng, &write_kinds, &write_weights),
                None => pick_weighted(&mut rng, &RequestKind::ALL, &spec.kind_weights),
            };
            let flag = if opened.contains(&f) {
                ConnectionFlag::Continuing
            } else if rng.random::<f64>() < spec.failed_ratio {
                ConnectionFlag::Failed
            } else {
                opened.insert(f);
                ConnectionFlag::New
            };
            PacketEvent {
                id: id as u64,
                flow: flow_key(f, keys),
                host,
                request_kind,
                flag,
                bytes: rng.random_range(1..=spec.max_bytes.max(1)),
            }
        })
        .collect()
}

/// Cuts a stream into batches of `batch_size`, scaled by the burst profile.
pub fn split_batches(spec: &TrafficSpec, events: Vec<PacketEvent>) -> Vec<Vec<PacketEvent>> {
    let mut out = Vec::new();
    let mut rest = events.into_iter().peekable();
    let mut index = 0;
    while rest.peek().is_some() {
        let mult = spec.burst.iter().find(|(b, _)| *b == index).map(|(_, m)| *m).unwrap_or(1.0);
        let size = ((spec.batch_size.max(1) as f64 * mult).round() as usize).max(1);
        out.push(rest.by_ref().take(size).collect());
        index += 1;
    }
    out
}

/// Trojan-detector workload with `planted` malicious sequences.
///
/// Each planted sequence goes to its own host and spells out `pattern` with
/// benign `OTHER` requests interleaved. All other traffic targets separate
/// hosts and never uses the pattern's final token, so it cannot match.
/// Returns the stream and the hosts that must raise an alarm.
pub fn planted_trojan_traffic(
    total_events: usize,
    planted: usize,
    pattern: &[RequestKind],
    seed: u64,
) -> (Vec<PacketEvent>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = *pattern.last().expect("non-empty pattern");
    let benign_kinds: Vec<RequestKind> = RequestKind::ALL.into_iter().filter(|k| *k != last).collect();
    let planted_events = planted * (pattern.len() + 1);
    let benign_hosts = 64;
    let mut slots: Vec<Option<(usize, RequestKind)>> = vec![None; total_events.max(planted_events)];
    // place each malicious host's requests at increasing random positions
    let mut free: Vec<usize> = (0..slots.len()).collect();
    for i in (1..free.len()).rev() {
        let j = rng.random_range(0..=i);
        free.swap(i, j);
    }
    let mut cursor = 0;
    let mut targets = Vec::with_capacity(planted);
    for p in 0..planted {
        let mut seq: Vec<RequestKind> = pattern.to_vec();
        seq.insert(rng.random_range(0..seq.len()), RequestKind::Other);
        let mut positions: Vec<usize> = free[cursor..cursor + seq.len()].to_vec();
        cursor += seq.len();
        positions.sort_unstable();
        for (pos, kind) in positions.into_iter().zip(seq) {
            slots[pos] = Some((p, kind));
        }
        targets.push(format!("victim{p}"));
    }
    let events = slots
        .into_iter()
        .enumerate()
        .map(|(id, slot)| {
            let f = rng.random_range(0..256usize);
            let (host, kind) = match slot {
                Some((p, k)) => (format!("victim{p}"), k),
                None => (
                    host_name(rng.random_range(0..benign_hosts)),
                    benign_kinds[rng.random_range(0..benign_kinds.len())],
                ),
            };
            PacketEvent {
                id: id as u64,
                flow: flow_key(f, benign_hosts),
                host,
                request_kind: kind,
                flag: ConnectionFlag::Continuing,
                bytes: 1,
            }
        })
        .collect();
    (events, targets)
}
