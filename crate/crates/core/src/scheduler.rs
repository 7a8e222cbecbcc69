// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Strategy selection, work partitioning and ready-unit dispatch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tpg::Tpg;
use crate::value::stable_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Exploration {
    Bfs,
    Dfs,
    NonStructured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Granularity {
    Fine,
    Grouped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScheduleStrategy {
    pub exploration: Exploration,
    pub granularity: Granularity,
}

impl ScheduleStrategy {
    pub const fn new(exploration: Exploration, granularity: Granularity) -> Self {
        ScheduleStrategy { exploration, granularity }
    }

    /// The six exploration × granularity combinations.
    pub fn all() -> [ScheduleStrategy; 6] {
        use Exploration::*;
        use Granularity::*;
        [
            Self::new(Bfs, Fine),
            Self::new(Bfs, Grouped),
            Self::new(Dfs, Fine),
            Self::new(Dfs, Grouped),
            Self::new(NonStructured, Fine),
            Self::new(NonStructured, Grouped),
        ]
    }
}

impl fmt::Display for Exploration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Exploration::Bfs => "bfs",
            Exploration::Dfs => "dfs",
            Exploration::NonStructured => "ns",
        })
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Fine => "fine",
            Granularity::Grouped => "grouped",
        })
    }
}

impl FromStr for Exploration {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bfs" => Ok(Exploration::Bfs),
            "dfs" => Ok(Exploration::Dfs),
            "ns" => Ok(Exploration::NonStructured),
            other => Err(format!("unknown exploration `{other}`")),
        }
    }
}

impl FromStr for Granularity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fine" => Ok(Granularity::Fine),
            "grouped" => Ok(Granularity::Grouped),
            other => Err(format!("unknown granularity `{other}`")),
        }
    }
}

/// Shape of a batch as seen by the strategy heuristic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct WorkloadProfile {
    pub td_density: f64,
    pub pd_density: f64,
    pub ld_density: f64,
    pub skew: f64,
    pub complexity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicThresholds {
    pub skew: f64,
    pub td_density: f64,
    pub pd_density: f64,
}

impl Default for HeuristicThresholds {
    fn default() -> Self {
        HeuristicThresholds { skew: 0.5, td_density: 1.0, pd_density: 0.3 }
    }
}

pub fn select_strategy(profile: &WorkloadProfile, forced: Option<ScheduleStrategy>) -> ScheduleStrategy {
    select_strategy_with(profile, forced, &HeuristicThresholds::default())
}

/// Skewed, time-dependency-heavy batches walk per-key chains depth-first as
/// fused groups; parametric-heavy batches go level by level; everything else
/// drains the ready set in any order.
pub fn select_strategy_with(
    profile: &WorkloadProfile,
    forced: Option<ScheduleStrategy>,
    t: &HeuristicThresholds,
) -> ScheduleStrategy {
    if let Some(s) = forced {
        return s;
    }
    if profile.skew > t.skew && profile.td_density > t.td_density {
        ScheduleStrategy::new(Exploration::Dfs, Granularity::Grouped)
    } else if profile.pd_density > t.pd_density {
        ScheduleStrategy::new(Exploration::Bfs, Granularity::Fine)
    } else {
        ScheduleStrategy::new(Exploration::NonStructured, Granularity::Fine)
    }
}

/// A schedulable unit: one op, or every op sharing a primary key when
/// grouped. Ops are kept in `(owner_seq, position)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    pub ops: Vec<u32>,
    pub min_seq: u64,
    pub min_depth: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkAssignment {
    pub units: Vec<Unit>,
    /// Unit ids per executor, ordered by `min_seq`.
    pub per_executor: Vec<Vec<u32>>,
}

impl WorkAssignment {
    pub fn executors(&self) -> usize {
        self.per_executor.len()
    }

    /// Op ids owned by one executor, in unit order.
    pub fn ops_of(&self, executor: usize) -> impl Iterator<Item = u32> + '_ {
        self.per_executor[executor].iter().flat_map(move |&u| self.units[u as usize].ops.iter().copied())
    }
}

fn key_bucket(tpg: &Tpg, key_id: u32, executors: usize) -> usize {
    let k = &tpg.keys[key_id as usize];
    let mut bytes = Vec::with_capacity(k.state_id.len() + k.key.len() + 1);
    bytes.extend_from_slice(k.state_id.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(k.key.as_bytes());
    (stable_hash(&bytes) % executors as u64) as usize
}

/// Hash-partitions the graph over `executors` workers by primary key.
pub fn assign_work(tpg: &Tpg, strategy: ScheduleStrategy, executors: usize) -> WorkAssignment {
    let executors = executors.max(1);
    let mut units: Vec<Unit> = match strategy.granularity {
        Granularity::Fine => tpg
            .nodes
            .iter()
            .map(|n| Unit { ops: vec![n.op_id], min_seq: n.owner_seq, min_depth: n.depth })
            .collect(),
        Granularity::Grouped => {
            let mut groups: Vec<Vec<u32>> = vec![Vec::new(); tpg.keys.len()];
            for n in &tpg.nodes {
                groups[n.primary_key() as usize].push(n.op_id);
            }
            groups
                .into_iter()
                .filter(|g| !g.is_empty())
                .map(|mut ops| {
                    ops.sort_by_key(|&o| (tpg.node(o).owner_seq, tpg.node(o).position));
                    let min_seq = tpg.node(ops[0]).owner_seq;
                    let min_depth = ops.iter().map(|&o| tpg.node(o).depth).min().unwrap_or(0);
                    Unit { ops, min_seq, min_depth }
                })
                .collect()
        }
    };
    units.sort_by_key(|u| (u.min_seq, u.ops[0]));
    let mut per_executor: Vec<Vec<u32>> = vec![Vec::new(); executors];
    for (i, u) in units.iter().enumerate() {
        let primary = tpg.node(u.ops[0]).primary_key();
        per_executor[key_bucket(tpg, primary, executors)].push(i as u32);
    }
    WorkAssignment { units, per_executor }
}

/// Per-executor dispatch cursor over its assignment slice.
#[derive(Debug)]
pub struct Dispatcher {
    strategy: ScheduleStrategy,
    order: Vec<u32>,
    /// Index of the first op of each unit not yet known to be terminal.
    progress: Vec<usize>,
    head: usize,
    last_op: Option<u32>,
    unit_of_op: std::collections::HashMap<u32, u32>,
}

impl Dispatcher {
    pub fn new(executor: usize, assignment: &WorkAssignment, strategy: ScheduleStrategy) -> Self {
        let mut order = assignment.per_executor[executor].clone();
        if strategy.exploration == Exploration::Bfs {
            order.sort_by_key(|&u| {
                let unit = &assignment.units[u as usize];
                (unit.min_depth, unit.min_seq, unit.ops[0])
            });
        }
        let unit_of_op = if strategy.exploration == Exploration::Dfs {
            order
                .iter()
                .flat_map(|&u| assignment.units[u as usize].ops.iter().map(move |&o| (o, u)))
                .collect()
        } else {
            Default::default()
        };
        Dispatcher {
            strategy,
            order,
            progress: vec![0; assignment.units.len()],
            head: 0,
            last_op: None,
            unit_of_op,
        }
    }

    /// Next op of `unit` that is not terminal yet.
    pub fn current_op(&mut self, unit: u32, assignment: &WorkAssignment, tpg: &Tpg) -> Option<u32> {
        let ops = &assignment.units[unit as usize].ops;
        let pos = &mut self.progress[unit as usize];
        while *pos < ops.len() && tpg.node(ops[*pos]).status().is_terminal() {
            *pos += 1;
        }
        ops.get(*pos).copied()
    }

    fn unit_ready(&mut self, unit: u32, assignment: &WorkAssignment, tpg: &Tpg) -> Option<bool> {
        let op = self.current_op(unit, assignment, tpg)?;
        Some(tpg.deps_satisfied(op))
    }

    /// Records the op the executor just ran; DFS follows its successors.
    pub fn note_executed(&mut self, op: u32) {
        self.last_op = Some(op);
    }

    /// True once every unit of the slice is exhausted.
    pub fn is_drained(&mut self, assignment: &WorkAssignment, tpg: &Tpg) -> bool {
        while self.head < self.order.len() {
            let u = self.order[self.head];
            if self.current_op(u, assignment, tpg).is_some() {
                return false;
            }
            self.head += 1;
        }
        true
    }

    /// Next unit whose current op has all dependencies satisfied, or `None`
    /// when the slice is exhausted or only blocked units remain.
    pub fn next_ready(&mut self, assignment: &WorkAssignment, tpg: &Tpg) -> Option<u32> {
        if self.strategy.exploration == Exploration::Dfs {
            if let Some(last) = self.last_op {
                let succs: Vec<u32> = tpg.succs(last).to_vec();
                for s in succs {
                    if let Some(&u) = self.unit_of_op.get(&s) {
                        if self.current_op(u, assignment, tpg) == Some(s) && tpg.deps_satisfied(s) {
                            return Some(u);
                        }
                    }
                }
            }
        }
        if self.is_drained(assignment, tpg) {
            return None;
        }
        for i in self.head..self.order.len() {
            let u = self.order[i];
            if self.unit_ready(u, assignment, tpg) == Some(true) {
                return Some(u);
            }
        }
        None
    }
}

/// Stateless form of [`Dispatcher::next_ready`] for a fresh cursor.
pub fn next_ready(
    executor: usize,
    assignment: &WorkAssignment,
    tpg: &Tpg,
    strategy: ScheduleStrategy,
) -> Option<u32> {
    Dispatcher::new(executor, assignment, strategy).next_ready(assignment, tpg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::job::*;
    use crate::tpg::{OpStatus, TransactionRequest, TxnBatch, TxnState};

    #[test]
    fn heuristic_rules() {
        let p = WorkloadProfile { td_density: 1.5, pd_density: 0.1, skew: 0.8, ..Default::default() };
        assert_eq!(select_strategy(&p, None), ScheduleStrategy::new(Exploration::Dfs, Granularity::Grouped));
        let p = WorkloadProfile { td_density: 0.2, pd_density: 0.5, skew: 0.1, ..Default::default() };
        assert_eq!(select_strategy(&p, None), ScheduleStrategy::new(Exploration::Bfs, Granularity::Fine));
        assert_eq!(
            select_strategy(&WorkloadProfile::default(), None),
            ScheduleStrategy::new(Exploration::NonStructured, Granularity::Fine)
        );
        let forced = ScheduleStrategy::new(Exploration::Bfs, Granularity::Grouped);
        assert_eq!(select_strategy(&p, Some(forced)), forced);
    }

    fn chain_job() -> ValidatedJob {
        let mut b = JobBuilder::new("t");
        b.define_state(StateSchema::new("x", "k", vec![FieldDef::int("v")], AccessScope::CrossFlow)).unwrap();
        b.define_access(StateAccessTemplate::write("a", &["x"])).unwrap();
        b.define_access(StateAccessTemplate::write("b", &["x"])).unwrap();
        b.define_access(StateAccessTemplate::write("c", &["x"])).unwrap();
        b.define_transaction(TransactionTemplate::new("abc", &["a", "b", "c"])).unwrap();
        b.define_transaction(TransactionTemplate::new("one", &["a"])).unwrap();
        b.define_vnf(VnfDefinition::transactional("v", &["abc", "one"], "kv", "kv")).unwrap();
        b.define_topology(TopologyNode::new("v", None, 1, 1)).unwrap();
        b.validate().unwrap()
    }

    #[test]
    fn readiness_follows_chain() {
        let job = chain_job();
        let mut batch = TxnBatch::new(1);
        let req = TransactionRequest::new(1, "v", 0, "abc")
            .with_key("a", &["k1"])
            .with_key("b", &["k2"])
            .with_key("c", &["k3"]);
        batch.enqueue_request(&job, req).unwrap();
        let tpg = batch.build().unwrap();
        let strategy = ScheduleStrategy::new(Exploration::NonStructured, Granularity::Fine);
        let asg = assign_work(&tpg, strategy, 1);
        assert!(tpg.node(0).transition(OpStatus::Ready, OpStatus::Executed));
        let u = next_ready(0, &asg, &tpg, strategy).unwrap();
        assert_eq!(asg.units[u as usize].ops, vec![1]);
    }

    #[test]
    fn all_blocked_returns_none() {
        let job = chain_job();
        let mut batch = TxnBatch::new(1);
        batch.enqueue_request(&job, TransactionRequest::new(1, "v", 0, "one").with_key("a", &["k"])).unwrap();
        batch.enqueue_request(&job, TransactionRequest::new(2, "v", 0, "one").with_key("a", &["k"])).unwrap();
        let tpg = batch.build().unwrap();
        let strategy = ScheduleStrategy::new(Exploration::Bfs, Granularity::Fine);
        let asg = assign_work(&tpg, strategy, 1);
        // executor slice holding only op 1, whose predecessor's txn is unresolved
        let only_second = WorkAssignment {
            units: asg.units.clone(),
            per_executor: vec![asg.per_executor[0].iter().copied().filter(|&u| asg.units[u as usize].ops == vec![1]).collect()],
        };
        assert_eq!(next_ready(0, &only_second, &tpg, strategy), None);
        assert!(tpg.node(0).transition(OpStatus::Ready, OpStatus::Executed));
        tpg.resolve_txn(0, TxnState::Committed);
        assert!(next_ready(0, &only_second, &tpg, strategy).is_some());
    }

    #[test]
    fn single_executor_in_seq_order() {
        let job = chain_job();
        let mut batch = TxnBatch::new(1);
        for s in [3u64, 1, 2] {
            batch
                .enqueue_request(&job, TransactionRequest::new(s, "v", 0, "one").with_key("a", &[&format!("k{s}")]))
                .unwrap();
        }
        let tpg = batch.build().unwrap();
        let asg = assign_work(&tpg, ScheduleStrategy::new(Exploration::NonStructured, Granularity::Fine), 1);
        let seqs: Vec<u64> = asg.ops_of(0).map(|o| tpg.node(o).owner_seq).collect();
        assert_eq!(seqs, vec![1, 2, 3]);
    }

    #[test]
    fn grouped_keeps_key_chain_together() {
        let job = chain_job();
        let mut batch = TxnBatch::new(1);
        for s in 1..=6u64 {
            let key = if s % 2 == 0 { "even" } else { "odd" };
            batch.enqueue_request(&job, TransactionRequest::new(s, "v", 0, "one").with_key("a", &[key])).unwrap();
        }
        let tpg = batch.build().unwrap();
        let asg = assign_work(&tpg, ScheduleStrategy::new(Exploration::Dfs, Granularity::Grouped), 2);
        assert_eq!(asg.units.len(), 2);
        for u in &asg.units {
            assert_eq!(u.ops.len(), 3);
            let k = tpg.node(u.ops[0]).primary_key();
            assert!(u.ops.iter().all(|&o| tpg.node(o).primary_key() == k));
        }
    }
}
