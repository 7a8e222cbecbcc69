// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Declarative description of a stateful service function chain.
//!
//! A [`JobBuilder`] records states, state-access templates, transactions,
//! VNFs and the chain topology. [`JobBuilder::validate`] closes over all
//! declarations and produces an immutable [`ValidatedJob`], the static
//! template set shared by every other part of the engine.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{FieldKind, FieldMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessScope {
    PerFlow,
    CrossFlow,
}

/// Requested consistency. Cross-flow states are always served with strong
/// consistency; `Eventual` is recorded and reported only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    #[default]
    Strong,
    Eventual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    #[serde(default)]
    pub kind: FieldKind,
}

impl FieldDef {
    pub fn new(name: impl Into<String>, kind: FieldKind) -> Self {
        FieldDef { name: name.into(), kind }
    }

    pub fn int(name: impl Into<String>) -> Self {
        Self::new(name, FieldKind::Int)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSchema {
    pub state_id: String,
    /// Semantic namespace of the instance keys, e.g. "host" or "flow".
    pub key_kind: String,
    pub fields: Vec<FieldDef>,
    pub access_scope: AccessScope,
    pub consistency: Consistency,
    /// Opaque tag from the `addStateObject(stateID, type)` spelling.
    pub object_type: Option<String>,
}

impl StateSchema {
    pub fn new(
        state_id: impl Into<String>,
        key_kind: impl Into<String>,
        fields: Vec<FieldDef>,
        access_scope: AccessScope,
    ) -> Self {
        StateSchema {
            state_id: state_id.into(),
            key_kind: key_kind.into(),
            fields,
            access_scope,
            consistency: Consistency::Strong,
            object_type: None,
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// The record every key holds before its first write.
    pub fn default_record(&self) -> FieldMap {
        self.fields
            .iter()
            .map(|f| (f.name.clone(), f.kind.default_value()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    #[serde(alias = "R", alias = "read")]
    Read,
    #[serde(alias = "W", alias = "write")]
    Write,
}

/// A read of one state, or a write of one state guarded by conditional
/// reads of the remaining listed states. The first state is the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateAccessTemplate {
    pub access_id: String,
    pub state_ids: Vec<String>,
    pub kind: AccessKind,
}

impl StateAccessTemplate {
    pub fn read(access_id: impl Into<String>, state_id: impl Into<String>) -> Self {
        StateAccessTemplate {
            access_id: access_id.into(),
            state_ids: vec![state_id.into()],
            kind: AccessKind::Read,
        }
    }

    pub fn write(access_id: impl Into<String>, state_ids: &[&str]) -> Self {
        StateAccessTemplate {
            access_id: access_id.into(),
            state_ids: state_ids.iter().map(|s| (*s).to_owned()).collect(),
            kind: AccessKind::Write,
        }
    }

    pub fn target_state(&self) -> &str {
        &self.state_ids[0]
    }

    pub fn conditional_reads(&self) -> &[String] {
        match self.kind {
            AccessKind::Read => &[],
            AccessKind::Write => &self.state_ids[1..],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionTemplate {
    pub txn_id: String,
    pub access_ids: Vec<String>,
}

impl TransactionTemplate {
    pub fn new(txn_id: impl Into<String>, access_ids: &[&str]) -> Self {
        TransactionTemplate {
            txn_id: txn_id.into(),
            access_ids: access_ids.iter().map(|s| (*s).to_owned()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfDefinition {
    pub vnf_id: String,
    pub txn_ids: Vec<String>,
    /// Name of a built-in per-flow UDF.
    pub per_flow_udf: String,
    /// Name of a built-in cross-flow UDF; absent iff `txn_ids` is empty.
    pub cross_flow_udf: Option<String>,
    /// Free-form configuration handed to the UDFs (patterns, host sets,
    /// port ranges, thresholds).
    pub params: serde_json::Value,
}

impl VnfDefinition {
    pub fn per_flow(vnf_id: impl Into<String>, udf: impl Into<String>) -> Self {
        VnfDefinition {
            vnf_id: vnf_id.into(),
            txn_ids: Vec::new(),
            per_flow_udf: udf.into(),
            cross_flow_udf: None,
            params: serde_json::Value::Null,
        }
    }

    pub fn transactional(
        vnf_id: impl Into<String>,
        txn_ids: &[&str],
        per_flow_udf: impl Into<String>,
        cross_flow_udf: impl Into<String>,
    ) -> Self {
        VnfDefinition {
            vnf_id: vnf_id.into(),
            txn_ids: txn_ids.iter().map(|s| (*s).to_owned()).collect(),
            per_flow_udf: per_flow_udf.into(),
            cross_flow_udf: Some(cross_flow_udf.into()),
            params: serde_json::Value::Null,
        }
    }

    pub fn with_params(mut self, params: serde_json::Value) -> Self {
        self.params = params;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyNode {
    pub vnf_id: String,
    pub parent_id: Option<String>,
    pub stage: u32,
    pub parallelism: u32,
}

impl TopologyNode {
    pub fn new(vnf_id: &str, parent_id: Option<&str>, stage: u32, parallelism: u32) -> Self {
        TopologyNode {
            vnf_id: vnf_id.to_owned(),
            parent_id: parent_id.map(str::to_owned),
            stage,
            parallelism,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Endpoint {
    pub address: String,
    pub port: u16,
    pub protocol: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum JobError {
    #[error("state `{0}` is already declared")]
    DuplicateStateId(String),
    #[error("state `{0}` declares no fields")]
    EmptyFields(String),
    #[error("state `{0}` is not declared")]
    UnknownStateId(String),
    #[error("access `{0}` must reference at least one state")]
    EmptyAccess(String),
    #[error("read access `{0}` references more than one state")]
    ReadWithMultipleStates(String),
    #[error("access `{0}` is already declared")]
    DuplicateAccessId(String),
    #[error("access `{0}` is not declared")]
    UnknownAccessId(String),
    #[error("transaction `{0}` has no accesses")]
    EmptyTransaction(String),
    #[error("transaction `{0}` is already declared")]
    DuplicateTxnId(String),
    #[error("transaction `{0}` is not declared")]
    UnknownTxnId(String),
    #[error("transaction `{txn}` already belongs to VNF `{owner}`")]
    TxnAlreadyOwned { txn: String, owner: String },
    #[error("VNF `{0}` declares transactions but no cross-flow UDF")]
    MissingCrossFlowUdf(String),
    #[error("VNF `{0}` declares a cross-flow UDF but no transactions")]
    UnexpectedCrossFlowUdf(String),
    #[error("VNF `{0}` is already declared")]
    DuplicateVnfId(String),
    #[error("VNF `{0}` is not declared")]
    UnknownVnf(String),
    #[error("topology parent `{0}` has not been added")]
    UnknownParent(String),
    #[error("VNF `{vnf}` declared at stage {stage}, expected {expected}")]
    BadStage { vnf: String, stage: u32, expected: u32 },
    #[error("VNF `{0}` needs parallelism of at least 1")]
    BadParallelism(String),
    #[error("malformed job document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    CycleDetected(Vec<String>),
    ScopeViolation { access: String, state: String },
    NoRoot,
    MultipleRoots(Vec<String>),
    RootNotAtStageOne(String),
    StageGap(u32),
    InconsistentStage(String),
    InconsistentParallelism(String),
    UnplacedVnf(String),
    UnownedTransaction(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CycleDetected(v) => write!(f, "topology cycle through {}", v.join(", ")),
            Violation::ScopeViolation { access, state } => {
                write!(f, "access `{access}` references per-flow state `{state}`")
            }
            Violation::NoRoot => write!(f, "topology has no root"),
            Violation::MultipleRoots(r) => write!(f, "topology has several roots: {}", r.join(", ")),
            Violation::RootNotAtStageOne(v) => write!(f, "root `{v}` is not at stage 1"),
            Violation::StageGap(s) => write!(f, "no VNF at stage {s}"),
            Violation::InconsistentStage(v) => write!(f, "VNF `{v}` placed at several stages"),
            Violation::InconsistentParallelism(v) => {
                write!(f, "VNF `{v}` declared with several parallelism values")
            }
            Violation::UnplacedVnf(v) => write!(f, "VNF `{v}` is not part of the topology"),
            Violation::UnownedTransaction(t) => write!(f, "transaction `{t}` has no owning VNF"),
        }
    }
}

/// Every violation found while closing a job.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("job failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationReport(pub Vec<Violation>);

impl ValidationReport {
    pub fn contains(&self, pred: impl Fn(&Violation) -> bool) -> bool {
        self.0.iter().any(pred)
    }
}

/// Mutable job under declaration.
#[derive(Debug, Clone, Default)]
pub struct JobBuilder {
    name: String,
    schemas: Vec<StateSchema>,
    accesses: Vec<StateAccessTemplate>,
    transactions: Vec<TransactionTemplate>,
    vnfs: Vec<VnfDefinition>,
    topology: Vec<TopologyNode>,
    input: Endpoint,
    output: Endpoint,
}

impl JobBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        JobBuilder { name: name.into(), ..Default::default() }
    }

    pub fn define_state(&mut self, schema: StateSchema) -> Result<&mut Self, JobError> {
        if self.schemas.iter().any(|s| s.state_id == schema.state_id) {
            return Err(JobError::DuplicateStateId(schema.state_id));
        }
        if schema.fields.is_empty() {
            return Err(JobError::EmptyFields(schema.state_id));
        }
        self.schemas.push(schema);
        Ok(self)
    }

    /// `registerState` spelling of [`define_state`](Self::define_state).
    pub fn register_state(
        &mut self,
        state_id: &str,
        key_kind: &str,
        fields: Vec<FieldDef>,
        scope: AccessScope,
        consistency: Consistency,
    ) -> Result<&mut Self, JobError> {
        let mut schema = StateSchema::new(state_id, key_kind, fields, scope);
        schema.consistency = consistency;
        self.define_state(schema)
    }

    /// `addStateObject` spelling. The type argument is kept as an opaque tag;
    /// when the state was already registered the tag is attached to it.
    pub fn add_state_object(
        &mut self,
        state_id: &str,
        object_type: &str,
        fields: Vec<FieldDef>,
    ) -> Result<&mut Self, JobError> {
        if let Some(existing) = self.schemas.iter_mut().find(|s| s.state_id == state_id) {
            existing.object_type = Some(object_type.to_owned());
            return Ok(self);
        }
        let mut schema = StateSchema::new(state_id, "key", fields, AccessScope::CrossFlow);
        schema.object_type = Some(object_type.to_owned());
        self.define_state(schema)
    }

    pub fn define_access(&mut self, tmpl: StateAccessTemplate) -> Result<&mut Self, JobError> {
        if self.accesses.iter().any(|a| a.access_id == tmpl.access_id) {
            return Err(JobError::DuplicateAccessId(tmpl.access_id));
        }
        if tmpl.state_ids.is_empty() {
            return Err(JobError::EmptyAccess(tmpl.access_id));
        }
        if tmpl.kind == AccessKind::Read && tmpl.state_ids.len() > 1 {
            return Err(JobError::ReadWithMultipleStates(tmpl.access_id));
        }
        for sid in &tmpl.state_ids {
            if !self.schemas.iter().any(|s| &s.state_id == sid) {
                return Err(JobError::UnknownStateId(sid.clone()));
            }
        }
        self.accesses.push(tmpl);
        Ok(self)
    }

    pub fn define_transaction(&mut self, tmpl: TransactionTemplate) -> Result<&mut Self, JobError> {
        if self.transactions.iter().any(|t| t.txn_id == tmpl.txn_id) {
            return Err(JobError::DuplicateTxnId(tmpl.txn_id));
        }
        if tmpl.access_ids.is_empty() {
            return Err(JobError::EmptyTransaction(tmpl.txn_id));
        }
        for aid in &tmpl.access_ids {
            if !self.accesses.iter().any(|a| &a.access_id == aid) {
                return Err(JobError::UnknownAccessId(aid.clone()));
            }
        }
        self.transactions.push(tmpl);
        Ok(self)
    }

    pub fn define_vnf(&mut self, def: VnfDefinition) -> Result<&mut Self, JobError> {
        if self.vnfs.iter().any(|v| v.vnf_id == def.vnf_id) {
            return Err(JobError::DuplicateVnfId(def.vnf_id));
        }
        match (&def.cross_flow_udf, def.txn_ids.is_empty()) {
            (None, false) => return Err(JobError::MissingCrossFlowUdf(def.vnf_id)),
            (Some(_), true) => return Err(JobError::UnexpectedCrossFlowUdf(def.vnf_id)),
            _ => {}
        }
        for tid in &def.txn_ids {
            if !self.transactions.iter().any(|t| &t.txn_id == tid) {
                return Err(JobError::UnknownTxnId(tid.clone()));
            }
            if let Some(owner) = self.vnfs.iter().find(|v| v.txn_ids.contains(tid)) {
                return Err(JobError::TxnAlreadyOwned {
                    txn: tid.clone(),
                    owner: owner.vnf_id.clone(),
                });
            }
        }
        self.vnfs.push(def);
        Ok(self)
    }

    pub fn define_topology(&mut self, node: TopologyNode) -> Result<&mut Self, JobError> {
        if !self.vnfs.iter().any(|v| v.vnf_id == node.vnf_id) {
            return Err(JobError::UnknownVnf(node.vnf_id));
        }
        if node.parallelism == 0 {
            return Err(JobError::BadParallelism(node.vnf_id));
        }
        let expected = match &node.parent_id {
            None => 1,
            Some(parent) => {
                let p = self
                    .topology
                    .iter()
                    .find(|n| &n.vnf_id == parent)
                    .ok_or_else(|| JobError::UnknownParent(parent.clone()))?;
                p.stage + 1
            }
        };
        if node.stage != expected {
            return Err(JobError::BadStage { vnf: node.vnf_id, stage: node.stage, expected });
        }
        self.topology.push(node);
        Ok(self)
    }

    /// Appends a topology node without the parent/stage checks. Only meant
    /// for exercising [`validate`](Self::validate) on malformed graphs.
    pub fn push_topology_unchecked(&mut self, node: TopologyNode) -> &mut Self {
        self.topology.push(node);
        self
    }

    pub fn assign_input_source(&mut self, address: &str, port: u16, protocol: &str) -> &mut Self {
        self.input = Endpoint { address: address.into(), port, protocol: protocol.into() };
        self
    }

    pub fn assign_output_target(&mut self, address: &str, port: u16, protocol: &str) -> &mut Self {
        self.output = Endpoint { address: address.into(), port, protocol: protocol.into() };
        self
    }

    pub fn validate(self) -> Result<ValidatedJob, ValidationReport> {
        let mut violations = Vec::new();

        let scopes: HashMap<&str, AccessScope> =
            self.schemas.iter().map(|s| (s.state_id.as_str(), s.access_scope)).collect();
        for a in &self.accesses {
            for sid in &a.state_ids {
                if scopes.get(sid.as_str()) == Some(&AccessScope::PerFlow) {
                    violations.push(Violation::ScopeViolation {
                        access: a.access_id.clone(),
                        state: sid.clone(),
                    });
                }
            }
        }

        for t in &self.transactions {
            if !self.vnfs.iter().any(|v| v.txn_ids.contains(&t.txn_id)) {
                violations.push(Violation::UnownedTransaction(t.txn_id.clone()));
            }
        }

        let mut stage_of: BTreeMap<&str, u32> = BTreeMap::new();
        let mut parallelism_of: BTreeMap<&str, u32> = BTreeMap::new();
        let mut roots = BTreeSet::new();
        for n in &self.topology {
            if let Some(prev) = stage_of.insert(&n.vnf_id, n.stage) {
                if prev != n.stage {
                    violations.push(Violation::InconsistentStage(n.vnf_id.clone()));
                }
            }
            if let Some(prev) = parallelism_of.insert(&n.vnf_id, n.parallelism) {
                if prev != n.parallelism {
                    violations.push(Violation::InconsistentParallelism(n.vnf_id.clone()));
                }
            }
            if n.parent_id.is_none() {
                roots.insert(n.vnf_id.clone());
                if n.stage != 1 {
                    violations.push(Violation::RootNotAtStageOne(n.vnf_id.clone()));
                }
            }
        }
        match roots.len() {
            0 if !self.topology.is_empty() || !self.vnfs.is_empty() => violations.push(Violation::NoRoot),
            0 | 1 => {}
            _ => violations.push(Violation::MultipleRoots(roots.into_iter().collect())),
        }
        for v in &self.vnfs {
            if !stage_of.contains_key(v.vnf_id.as_str()) {
                violations.push(Violation::UnplacedVnf(v.vnf_id.clone()));
            }
        }
        if let Some(&max) = stage_of.values().max() {
            let present: BTreeSet<u32> = stage_of.values().copied().collect();
            for s in 1..=max {
                if !present.contains(&s) {
                    violations.push(Violation::StageGap(s));
                }
            }
        }
        if let Some(cycle) = find_cycle(&self.topology) {
            violations.push(Violation::CycleDetected(cycle));
        }

        if !violations.is_empty() {
            return Err(ValidationReport(violations));
        }
        let stage_of = stage_of_owned(&stage_of);
        let parallelism_of = parallelism_of_owned(&parallelism_of);
        Ok(ValidatedJob::assemble(self, stage_of, parallelism_of))
    }
}

fn stage_of_owned(m: &BTreeMap<&str, u32>) -> BTreeMap<String, u32> {
    m.iter().map(|(k, v)| ((*k).to_owned(), *v)).collect()
}

fn parallelism_of_owned(m: &BTreeMap<&str, u32>) -> BTreeMap<String, u32> {
    m.iter().map(|(k, v)| ((*k).to_owned(), *v)).collect()
}

/// Returns the VNFs of one cycle in the parent→child graph, if any.
fn find_cycle(topology: &[TopologyNode]) -> Option<Vec<String>> {
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut indeg: BTreeMap<&str, usize> = BTreeMap::new();
    for n in topology {
        indeg.entry(&n.vnf_id).or_insert(0);
        if let Some(p) = &n.parent_id {
            indeg.entry(p).or_insert(0);
            children.entry(p).or_default().push(&n.vnf_id);
            *indeg.get_mut(n.vnf_id.as_str()).unwrap() += 1;
        }
    }
    let mut queue: Vec<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
    while let Some(v) = queue.pop() {
        for c in children.get(v).into_iter().flatten() {
            let d = indeg.get_mut(c).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push(c);
            }
        }
    }
    let rest: Vec<String> =
        indeg.into_iter().filter(|(_, d)| *d > 0).map(|(k, _)| k.to_owned()).collect();
    (!rest.is_empty()).then_some(rest)
}

/// Immutable, validated template set. Safe to share across executors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedJob {
    pub name: String,
    pub schemas: Vec<StateSchema>,
    pub accesses: Vec<StateAccessTemplate>,
    pub transactions: Vec<TransactionTemplate>,
    pub vnfs: Vec<VnfDefinition>,
    pub topology: Vec<TopologyNode>,
    pub input: Endpoint,
    pub output: Endpoint,
    stage_of: BTreeMap<String, u32>,
    parallelism_of: BTreeMap<String, u32>,
}

impl ValidatedJob {
    fn assemble(b: JobBuilder, stage_of: BTreeMap<String, u32>, parallelism_of: BTreeMap<String, u32>) -> Self {
        ValidatedJob {
            name: b.name,
            schemas: b.schemas,
            accesses: b.accesses,
            transactions: b.transactions,
            vnfs: b.vnfs,
            topology: b.topology,
            input: b.input,
            output: b.output,
            stage_of,
            parallelism_of,
        }
    }

    pub fn schema(&self, state_id: &str) -> Option<&StateSchema> {
        self.schemas.iter().find(|s| s.state_id == state_id)
    }

    pub fn access(&self, access_id: &str) -> Option<&StateAccessTemplate> {
        self.accesses.iter().find(|a| a.access_id == access_id)
    }

    pub fn transaction(&self, txn_id: &str) -> Option<&TransactionTemplate> {
        self.transactions.iter().find(|t| t.txn_id == txn_id)
    }

    pub fn vnf(&self, vnf_id: &str) -> Option<&VnfDefinition> {
        self.vnfs.iter().find(|v| v.vnf_id == vnf_id)
    }

    /// Position of a VNF in declaration order; used as its wire id.
    pub fn vnf_index(&self, vnf_id: &str) -> Option<u32> {
        self.vnfs.iter().position(|v| v.vnf_id == vnf_id).map(|i| i as u32)
    }

    /// Position of a transaction template in declaration order; its wire id.
    pub fn txn_index(&self, txn_id: &str) -> Option<u32> {
        self.transactions.iter().position(|t| t.txn_id == txn_id).map(|i| i as u32)
    }

    pub fn owner_of(&self, txn_id: &str) -> Option<&VnfDefinition> {
        self.vnfs.iter().find(|v| v.txn_ids.iter().any(|t| t == txn_id))
    }

    pub fn stage_of(&self, vnf_id: &str) -> Option<u32> {
        self.stage_of.get(vnf_id).copied()
    }

    pub fn parallelism_of(&self, vnf_id: &str) -> Option<u32> {
        self.parallelism_of.get(vnf_id).copied()
    }

    pub fn max_stage(&self) -> u32 {
        self.stage_of.values().copied().max().unwrap_or(0)
    }

    /// VNFs of one stage in declaration order.
    pub fn vnfs_at_stage(&self, stage: u32) -> Vec<&VnfDefinition> {
        self.vnfs.iter().filter(|v| self.stage_of(&v.vnf_id) == Some(stage)).collect()
    }

    pub fn children_of(&self, vnf_id: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .topology
            .iter()
            .filter(|n| n.parent_id.as_deref() == Some(vnf_id))
            .map(|n| n.vnf_id.as_str())
            .collect();
        out.dedup();
        out
    }

    pub fn parents_of(&self, vnf_id: &str) -> Vec<&str> {
        self.topology
            .iter()
            .filter(|n| n.vnf_id == vnf_id)
            .filter_map(|n| n.parent_id.as_deref())
            .collect()
    }

    /// Deterministic serialization of the template set.
    pub fn template_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("template set serializes")
    }

    pub fn from_json(text: &str) -> Result<ValidatedJob, LoadError> {
        let doc: JobDocument =
            serde_json::from_str(text).map_err(|e| LoadError::Job(JobError::Document(e.to_string())))?;
        let builder = doc.into_builder().map_err(LoadError::Job)?;
        builder.validate().map_err(LoadError::Validation)
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Job(#[from] JobError),
    #[error(transparent)]
    Validation(#[from] ValidationReport),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FieldSpec {
    Name(String),
    Full(FieldDef),
}

#[derive(Debug, Deserialize)]
struct StateDoc {
    id: String,
    #[serde(default = "default_key_kind")]
    key: String,
    fields: Vec<FieldSpec>,
    #[serde(default = "default_scope")]
    scope: AccessScope,
    #[serde(default)]
    consistency: Consistency,
    #[serde(default, rename = "type")]
    object_type: Option<String>,
}

fn default_key_kind() -> String {
    "key".into()
}

fn default_scope() -> AccessScope {
    AccessScope::CrossFlow
}

#[derive(Debug, Deserialize)]
struct AccessDoc {
    id: String,
    states: Vec<String>,
    #[serde(rename = "type")]
    kind: AccessKind,
}

#[derive(Debug, Deserialize)]
struct TxnDoc {
    id: String,
    accesses: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct VnfDoc {
    id: String,
    #[serde(default)]
    txns: Vec<String>,
    per_flow_udf: String,
    #[serde(default)]
    cross_flow_udf: Option<String>,
    #[serde(default)]
    params: serde_json::Value,
}

#[derive(Debug, Deserialize)]
struct TopoDoc {
    vnf: String,
    #[serde(default)]
    parent: Option<String>,
    stage: u32,
    parallelism: u32,
}

/// JSON mirror of the builder calls.
#[derive(Debug, Deserialize)]
struct JobDocument {
    name: String,
    #[serde(default)]
    states: Vec<StateDoc>,
    #[serde(default)]
    accesses: Vec<AccessDoc>,
    #[serde(default)]
    transactions: Vec<TxnDoc>,
    #[serde(default)]
    vnfs: Vec<VnfDoc>,
    #[serde(default)]
    topology: Vec<TopoDoc>,
    #[serde(default)]
    input: Endpoint,
    #[serde(default)]
    output: Endpoint,
}

impl JobDocument {
    fn into_builder(self) -> Result<JobBuilder, JobError> {
        let mut b = JobBuilder::new(self.name);
        for s in self.states {
            let fields = s
                .fields
                .into_iter()
                .map(|f| match f {
                    FieldSpec::Name(n) => FieldDef::int(n),
                    FieldSpec::Full(d) => d,
                })
                .collect();
            let mut schema = StateSchema::new(s.id, s.key, fields, s.scope);
            schema.consistency = s.consistency;
            schema.object_type = s.object_type;
            b.define_state(schema)?;
        }
        for a in self.accesses {
            b.define_access(StateAccessTemplate { access_id: a.id, state_ids: a.states, kind: a.kind })?;
        }
        for t in self.transactions {
            b.define_transaction(TransactionTemplate { txn_id: t.id, access_ids: t.accesses })?;
        }
        for v in self.vnfs {
            b.define_vnf(VnfDefinition {
                vnf_id: v.id,
                txn_ids: v.txns,
                per_flow_udf: v.per_flow_udf,
                cross_flow_udf: v.cross_flow_udf,
                params: v.params,
            })?;
        }
        for n in self.topology {
            b.define_topology(TopologyNode {
                vnf_id: n.vnf,
                parent_id: n.parent,
                stage: n.stage,
                parallelism: n.parallelism,
            })?;
        }
        b.input = self.input;
        b.output = self.output;
        Ok(b)
    }
}
