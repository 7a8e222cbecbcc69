// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Quadratic reference for dependency graphs: each op links to its nearest
//! earlier op on every key it touches.

use std::collections::{BTreeMap, BTreeSet};

use chainstate::job::{AccessKind, ValidatedJob};
use chainstate::tpg::{make_seq, DepKind, TransactionRequest, TxnBatch};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Op identity independent of node numbering.
pub type OpId = (u64, u32);

pub struct RefOp {
    id: OpId,
    keys: BTreeSet<(String, String)>,
    write_state: Option<String>,
    cond_reads: Vec<String>,
}

pub fn random_request(job: &ValidatedJob, rng: &mut ChaCha8Rng, seq: u64, domain: usize) -> TransactionRequest {
    let vnfs: Vec<_> = job.vnfs.iter().filter(|v| !v.txn_ids.is_empty()).collect();
    let vnf = vnfs[rng.random_range(0..vnfs.len())];
    let txn_id = &vnf.txn_ids[rng.random_range(0..vnf.txn_ids.len())];
    let mut req = TransactionRequest::new(seq, &vnf.vnf_id, rng.random_range(0..4), txn_id);
    for access_id in &job.transaction(txn_id).unwrap().access_ids {
        let access = job.access(access_id).unwrap();
        let keys: Vec<String> = access.state_ids.iter().map(|_| format!("k{}", rng.random_range(0..domain))).collect();
        req.target_keys.insert(access_id.clone(), keys);
    }
    req
}

pub fn reference_ops(job: &ValidatedJob, reqs: &[TransactionRequest]) -> Vec<RefOp> {
    let mut out = Vec::new();
    for r in reqs {
        for (pos, access_id) in job.transaction(&r.txn_id).unwrap().access_ids.iter().enumerate() {
            let access = job.access(access_id).unwrap();
            let keys = access.state_ids.iter().cloned().zip(r.target_keys[access_id].iter().cloned()).collect();
            let (write_state, cond_reads) = match access.kind {
                AccessKind::Write => (Some(access.state_ids[0].clone()), access.state_ids[1..].to_vec()),
                AccessKind::Read => (None, Vec::new()),
            };
            out.push(RefOp { id: (r.seq, pos as u32), keys, write_state, cond_reads });
        }
    }
    out
}

pub fn reference_edges(ops: &[RefOp]) -> BTreeSet<(OpId, OpId, DepKind)> {
    let mut edges = BTreeSet::new();
    for a in ops {
        for b in ops {
            if a.id >= b.id {
                continue;
            }
            // a → b on a shared key when nothing touching that key sits between them
            for k in a.keys.intersection(&b.keys) {
                let between = ops.iter().any(|c| c.id > a.id && c.id < b.id && c.keys.contains(k));
                if !between {
                    edges.insert((a.id, b.id, DepKind::TD));
                }
            }
            if a.id.0 == b.id.0 {
                if b.id.1 == a.id.1 + 1 {
                    edges.insert((a.id, b.id, DepKind::LD));
                }
                if let (Some(ws), Some(_)) = (&a.write_state, &b.write_state) {
                    if b.cond_reads.contains(ws) {
                        edges.insert((a.id, b.id, DepKind::PD));
                    }
                }
            }
        }
    }
    edges
}

pub fn acyclic(n: usize, edges: &[(u32, u32)]) -> bool {
    let mut adj: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(a, b) in edges {
        adj.entry(a).or_default().push(b);
    }
    // 0 unvisited, 1 on stack, 2 done
    let mut color = vec![0u8; n];
    fn visit(v: u32, adj: &BTreeMap<u32, Vec<u32>>, color: &mut [u8]) -> bool {
        color[v as usize] = 1;
        for &w in adj.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
            let c = color[w as usize];
            if c == 1 || (c == 0 && !visit(w, adj, color)) {
                return false;
            }
        }
        color[v as usize] = 2;
        true
    }
    (0..n as u32).all(|v| color[v as usize] != 0 || visit(v, &adj, &mut color))
}

/// Builds one random batch for `job` and checks it against the reference.
/// Returns the edge kinds present.
pub fn check_random_batch(job: &ValidatedJob, rng: &mut ChaCha8Rng, batch_id: u64) -> Result<BTreeSet<DepKind>, String> {
    let count = rng.random_range(0..40);
    let domain = rng.random_range(1..12);
    let mut seqs: Vec<u64> = (0..count).map(|i| make_seq(batch_id, i * 3 + rng.random_range(0..3))).collect();
    seqs.shuffle(rng);
    let reqs: Vec<TransactionRequest> = seqs.iter().map(|&s| random_request(job, rng, s, domain)).collect();

    let mut batch = TxnBatch::new(1);
    for r in &reqs {
        batch.enqueue_request(job, r.clone()).map_err(|e| e.to_string())?;
    }
    let tpg = batch.build().map_err(|e| e.to_string())?;
    let id_of = |op: u32| {
        let n = tpg.node(op);
        (n.owner_seq, n.position)
    };
    let got: BTreeSet<(OpId, OpId, DepKind)> = tpg.edges.iter().map(|e| (id_of(e.from), id_of(e.to), e.kind)).collect();
    if got.len() != tpg.edges.len() {
        return Err(format!("batch {batch_id}: duplicate edges"));
    }
    if got != reference_edges(&reference_ops(job, &reqs)) {
        return Err(format!("batch {batch_id}: edge sets differ"));
    }
    let plain: Vec<(u32, u32)> = tpg.edges.iter().map(|e| (e.from, e.to)).collect();
    if !acyclic(tpg.nodes.len(), &plain) {
        return Err(format!("batch {batch_id}: cycle"));
    }
    if tpg.edges.iter().any(|e| tpg.node(e.to).depth <= tpg.node(e.from).depth) {
        return Err(format!("batch {batch_id}: depth not increasing along an edge"));
    }
    Ok(got.into_iter().map(|e| e.2).collect())
}
