// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Instance failures, rollback and replay, and per-flow state migration.
//!
//! Everything here runs with the engine quiesced between batches. Recovery
//! restores the last checkpoint (or the seeded genesis state), replays the
//! retained batch inputs and checks each replayed dependency log against
//! the original. Transactions the failed instance had in flight are
//! dropped, not retried.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineError, RunStop};
use crate::value::stable_hash;
use crate::vnf::PacketEvent;

/// Instance that owns `flow` when a VNF runs `k` instances.
pub fn hash_route(flow: &str, k: u32) -> u32 {
    (stable_hash(flow.as_bytes()) % u64::from(k.max(1))) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub vnf_id: String,
    pub instance_id: u32,
    pub at_batch: u64,
    /// `None` fails the instance at the boundary before `at_batch`;
    /// `Some(n)` fails it after its stage has executed `n` ops.
    #[serde(default)]
    pub after_ops: Option<usize>,
}

impl FailureEvent {
    pub fn at_boundary(vnf_id: &str, instance_id: u32, at_batch: u64) -> Self {
        FailureEvent { vnf_id: vnf_id.to_owned(), instance_id, at_batch, after_ops: None }
    }

    pub fn mid_batch(vnf_id: &str, instance_id: u32, at_batch: u64, after_ops: usize) -> Self {
        FailureEvent { vnf_id: vnf_id.to_owned(), instance_id, at_batch, after_ops: Some(after_ops) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub vnf_id: String,
    pub instance_id: u32,
    pub at_batch: u64,
    /// True when the failure cut a stage short. Only then are the failed
    /// instance's transactions of `at_batch` dropped.
    pub interrupted: bool,
    /// Batch id of the checkpoint restored; 0 is the seeded genesis state.
    pub restored_batch: u64,
    /// Set when no checkpoint existed and replay started from genesis.
    pub no_snapshot_available: bool,
    pub replayed_batches: Vec<u64>,
    pub aborted_txns: usize,
    pub aborted_seqs: Vec<u64>,
    pub duration_us: u64,
}

impl RecoveryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Reason attached to transactions dropped because their instance failed.
pub const FAILED_INSTANCE_REASON: &str = "instance failure";

/// Handles a failure observed at a batch boundary: nothing is in flight,
/// so rollback and replay must reproduce the current state exactly.
pub fn on_instance_failure(event: &FailureEvent, engine: &mut Engine) -> Result<RecoveryReport, EngineError> {
    recover(event, engine, None)
}

/// Rolls back and replays. `interrupted` carries the input and boundary
/// reconfigurations of a batch that was cut short; the caller re-runs that
/// batch afterwards with the failed instance excluded.
pub(crate) fn recover(
    event: &FailureEvent,
    engine: &mut Engine,
    interrupted: Option<(&[PacketEvent], &[Reconfiguration])>,
) -> Result<RecoveryReport, EngineError> {
    let started = Instant::now();
    let k = engine.parallelism(&event.vnf_id).ok_or_else(|| EngineError::UnknownVnf(event.vnf_id.clone()))?;
    if event.instance_id >= k {
        return Err(EngineError::UnknownInstance { vnf: event.vnf_id.clone(), instance: event.instance_id });
    }

    let (cp, fell_back) = match &engine.checkpoint {
        Some(cp) => (cp.clone(), false),
        None => (engine.genesis.clone(), true),
    };
    let redo = std::mem::take(&mut engine.redo);
    engine.restore(&cp)?;

    let mut replayed = Vec::with_capacity(redo.len());
    for record in redo {
        for r in &record.reconfig {
            engine.apply(r)?;
        }
        let report = match engine.run_batch(record.batch, &record.events, None)? {
            RunStop::Completed(r) => *r,
            RunStop::Interrupted => unreachable!("replay never halts"),
        };
        if report.log != record.log {
            return Err(EngineError::ReplayDiverged(record.batch));
        }
        engine.metrics.extend(report.stages);
        engine.next_batch = record.batch + 1;
        replayed.push(record.batch);
        engine.redo.push(record);
    }

    if let Some((_, reconfig)) = interrupted {
        engine.exclude(event.at_batch, &event.vnf_id, event.instance_id);
        for r in reconfig {
            engine.apply(r)?;
        }
    }

    Ok(RecoveryReport {
        vnf_id: event.vnf_id.clone(),
        instance_id: event.instance_id,
        at_batch: event.at_batch,
        interrupted: interrupted.is_some(),
        restored_batch: cp.next_batch - 1,
        no_snapshot_available: fell_back,
        replayed_batches: replayed,
        aborted_txns: 0,
        aborted_seqs: Vec::new(),
        duration_us: started.elapsed().as_micros() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationPlan {
    pub vnf_id: String,
    pub old_parallelism: u32,
    pub new_parallelism: u32,
    /// Every live flow of the VNF → its instance after the move.
    pub reassignment: BTreeMap<String, u32>,
    /// `(flow, from, to)` for flows whose instance changes, sorted by flow.
    pub transfers: Vec<(String, u32, u32)>,
}

/// Rehashes `live` (flow → current instance) over `new_k` instances.
pub fn plan_rehash(
    vnf_id: &str,
    old_k: u32,
    new_k: u32,
    live: &BTreeMap<String, u32>,
) -> Result<MigrationPlan, EngineError> {
    if new_k == 0 {
        return Err(EngineError::BadParallelism);
    }
    let reassignment: BTreeMap<String, u32> = live.keys().map(|f| (f.clone(), hash_route(f, new_k))).collect();
    let transfers = live
        .iter()
        .filter(|(f, from)| reassignment[*f] != **from)
        .map(|(f, from)| (f.clone(), *from, reassignment[f]))
        .collect();
    Ok(MigrationPlan {
        vnf_id: vnf_id.to_owned(),
        old_parallelism: old_k,
        new_parallelism: new_k,
        reassignment,
        transfers,
    })
}

/// Plans a rescale of `vnf_id` to `new_k` instances from the engine's
/// current placement of per-flow records.
pub fn plan_migration(engine: &Engine, vnf_id: &str, new_k: u32) -> Result<MigrationPlan, EngineError> {
    let old_k = engine.parallelism(vnf_id).ok_or_else(|| EngineError::UnknownVnf(vnf_id.to_owned()))?;
    plan_rehash(vnf_id, old_k, new_k, &engine.live_flows(vnf_id)?)
}

/// Moves per-flow records through the store's migration area and switches
/// the VNF to the plan's parallelism. Must run between batches.
pub fn execute_migration(plan: &MigrationPlan, engine: &mut Engine) -> Result<(), EngineError> {
    let vnf = &plan.vnf_id;
    if !engine.locals.contains_key(vnf) {
        return Err(EngineError::UnknownVnf(vnf.clone()));
    }
    if plan.new_parallelism == 0 {
        return Err(EngineError::BadParallelism);
    }
    for (flow, from, _) in &plan.transfers {
        let record = engine.locals[vnf]
            .get(*from as usize)
            .and_then(|inst| inst.get(flow))
            .cloned()
            .ok_or_else(|| EngineError::UnknownInstance { vnf: vnf.clone(), instance: *from })?;
        engine.locals.get_mut(vnf).expect("checked above")[*from as usize].remove(flow);
        engine.store.park_migrating(vnf, flow, record);
    }
    engine
        .locals
        .get_mut(vnf)
        .expect("checked above")
        .resize_with(plan.new_parallelism as usize, Default::default);
    for (flow, _, to) in &plan.transfers {
        let record = engine.store.unpark_migrating(vnf, flow).expect("parked above");
        engine.locals.get_mut(vnf).expect("checked above")[*to as usize].insert(flow.clone(), record);
    }
    engine.overrides.remove(vnf);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloneSpec {
    pub vnf_id: String,
    pub straggler: u32,
    pub backup: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reconfiguration {
    Migrate(MigrationPlan),
    Clone(CloneSpec),
}

/// Hands every flow of a slow instance to an existing backup instance.
/// Records travel through the store's migration area; the moved flows are
/// pinned to the backup until the next rescale. Returns the moved flows.
pub fn clone_to_backup(
    engine: &mut Engine,
    vnf_id: &str,
    straggler: u32,
    backup: u32,
) -> Result<Vec<String>, EngineError> {
    let k = engine.parallelism(vnf_id).ok_or_else(|| EngineError::UnknownVnf(vnf_id.to_owned()))?;
    for i in [straggler, backup] {
        if i >= k {
            return Err(EngineError::UnknownInstance { vnf: vnf_id.to_owned(), instance: i });
        }
    }
    if straggler == backup {
        return Ok(Vec::new());
    }
    let moved = std::mem::take(&mut engine.locals.get_mut(vnf_id).expect("checked above")[straggler as usize]);
    let flows: Vec<String> = moved.keys().cloned().collect();
    for (flow, record) in moved {
        engine.store.park_migrating(vnf_id, &flow, record);
    }
    let pins = engine.overrides.entry(vnf_id.to_owned()).or_default();
    for flow in &flows {
        pins.insert(flow.clone(), backup);
    }
    // flows pinned to the straggler earlier follow it to the backup
    for target in pins.values_mut() {
        if *target == straggler {
            *target = backup;
        }
    }
    for flow in &flows {
        let record = engine.store.unpark_migrating(vnf_id, flow).expect("parked above");
        engine.locals.get_mut(vnf_id).expect("checked above")[backup as usize].insert(flow.clone(), record);
    }
    Ok(flows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn live(n: usize, k: u32) -> BTreeMap<String, u32> {
        (0..n).map(|i| format!("flow{i}")).map(|f| (f.clone(), hash_route(&f, k))).collect()
    }

    #[test]
    fn identity_plan_moves_nothing() {
        let plan = plan_rehash("fw", 3, 3, &live(50, 3)).unwrap();
        assert!(plan.transfers.is_empty());
        assert_eq!(plan.reassignment.len(), 50);
    }

    #[test]
    fn doubling_moves_flows_whose_residue_changes() {
        let flows = live(100, 2);
        let plan = plan_rehash("fw", 2, 4, &flows).unwrap();
        let expected: Vec<&String> = flows
            .keys()
            .filter(|f| stable_hash(f.as_bytes()) % 4 != stable_hash(f.as_bytes()) % 2)
            .collect();
        let got: Vec<&String> = plan.transfers.iter().map(|(f, _, _)| f).collect();
        assert_eq!(got, expected);
        assert!(!got.is_empty());
    }

    #[test]
    fn shrinking_to_one_puts_everything_on_zero() {
        let plan = plan_rehash("fw", 4, 1, &live(40, 4)).unwrap();
        assert!(plan.reassignment.values().all(|&i| i == 0));
        assert!(matches!(plan_rehash("fw", 4, 0, &live(1, 4)), Err(EngineError::BadParallelism)));
    }
}
