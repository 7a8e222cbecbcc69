// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use thiserror::Error;

use crate::job::{AccessKind, StateAccessTemplate, StateSchema, TransactionTemplate, ValidatedJob};
use crate::store::StateKey;
use crate::tpg::TransactionRequest;
use crate::value::{FieldMap, Scalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UdfError {
    #[error("field `{field}` is not declared by state `{state}`")]
    FieldNotInSchema { state: String, field: String },
    #[error("state `{0}` is not accessed by this transaction")]
    UndeclaredState(String),
    #[error("state `{0}` is not a write target of this transaction")]
    NotWritable(String),
    #[error("field `{field}` of `{state}` expects a different value kind")]
    TypeMismatch { state: String, field: String },
    #[error("packet data `{0}` is missing")]
    MissingPacketData(String),
    #[error("transaction already aborted")]
    Aborted,
    #[error("{0}")]
    Failed(String),
}

/// Per-transaction view handed to a cross-flow UDF.
///
/// Reads resolve against the values loaded for the transaction's sequence
/// number; writes are staged here and become visible to other transactions
/// only when the transaction commits.
pub struct DataHolder<'a> {
    request: &'a TransactionRequest,
    template: &'a TransactionTemplate,
    accesses: Vec<&'a StateAccessTemplate>,
    job: &'a ValidatedJob,
    reads: &'a BTreeMap<StateKey, FieldMap>,
    staged: BTreeMap<StateKey, FieldMap>,
    abort_reason: Option<String>,
    notifications: Vec<String>,
    results: FieldMap,
}

impl<'a> DataHolder<'a> {
    /// `reads` must hold a value for every key the request targets.
    pub fn new(
        job: &'a ValidatedJob,
        request: &'a TransactionRequest,
        reads: &'a BTreeMap<StateKey, FieldMap>,
    ) -> Option<Self> {
        let template = job.transaction(&request.txn_id)?;
        let accesses = template.access_ids.iter().map(|a| job.access(a)).collect::<Option<Vec<_>>>()?;
        Some(DataHolder {
            request,
            template,
            accesses,
            job,
            reads,
            staged: BTreeMap::new(),
            abort_reason: None,
            notifications: Vec::new(),
            results: FieldMap::new(),
        })
    }

    pub fn seq(&self) -> u64 {
        self.request.seq
    }

    pub fn request(&self) -> &TransactionRequest {
        self.request
    }

    pub fn template(&self) -> &TransactionTemplate {
        self.template
    }

    pub fn get_packet_data(&self, name: &str) -> Result<&Scalar, UdfError> {
        self.request.packet_data.get(name).ok_or_else(|| UdfError::MissingPacketData(name.to_owned()))
    }

    fn key_for(&self, access: &StateAccessTemplate, state_id: &str) -> Option<StateKey> {
        let keys = self.request.target_keys.get(&access.access_id)?;
        access
            .state_ids
            .iter()
            .position(|s| s == state_id)
            .and_then(|i| keys.get(i))
            .map(|k| StateKey::new(state_id, k.clone()))
    }

    fn resolve(&self, state_id: &str) -> Result<StateKey, UdfError> {
        self.accesses
            .iter()
            .find_map(|a| self.key_for(a, state_id))
            .ok_or_else(|| UdfError::UndeclaredState(state_id.to_owned()))
    }

    fn resolve_in(&self, access_id: &str, state_id: &str) -> Result<StateKey, UdfError> {
        self.accesses
            .iter()
            .find(|a| a.access_id == access_id)
            .and_then(|a| self.key_for(a, state_id))
            .ok_or_else(|| UdfError::UndeclaredState(state_id.to_owned()))
    }

    fn schema(&self, state_id: &str) -> Result<&'a StateSchema, UdfError> {
        self.job.schema(state_id).ok_or_else(|| UdfError::UndeclaredState(state_id.to_owned()))
    }

    fn record_of(&self, key: &StateKey) -> Result<&FieldMap, UdfError> {
        self.staged
            .get(key)
            .or_else(|| self.reads.get(key))
            .ok_or_else(|| UdfError::UndeclaredState(key.state_id.clone()))
    }

    /// Whole record of a state, including this transaction's staged writes.
    pub fn get_state(&self, state_id: &str) -> Result<&FieldMap, UdfError> {
        let key = self.resolve(state_id)?;
        self.record_of(&key)
    }

    pub fn get_state_field(&self, state_id: &str, field: &str) -> Result<&Scalar, UdfError> {
        let key = self.resolve(state_id)?;
        self.field_of(&key, field)
    }

    /// Reads `state_id` through a specific access; needed when one
    /// transaction touches two keys of the same state.
    pub fn get_field(&self, access_id: &str, state_id: &str, field: &str) -> Result<&Scalar, UdfError> {
        let key = self.resolve_in(access_id, state_id)?;
        self.field_of(&key, field)
    }

    fn field_of(&self, key: &StateKey, field: &str) -> Result<&Scalar, UdfError> {
        self.record_of(key)?.get(field).ok_or_else(|| UdfError::FieldNotInSchema {
            state: key.state_id.clone(),
            field: field.to_owned(),
        })
    }

    pub fn key_of(&self, state_id: &str) -> Result<StateKey, UdfError> {
        self.resolve(state_id)
    }

    pub fn set_state_field(&mut self, state_id: &str, field: &str, value: Scalar) -> Result<(), UdfError> {
        let key = self
            .accesses
            .iter()
            .filter(|a| a.kind == AccessKind::Write && a.target_state() == state_id)
            .find_map(|a| self.key_for(a, state_id))
            .ok_or_else(|| UdfError::NotWritable(state_id.to_owned()))?;
        self.stage(key, field, value)
    }

    pub fn set_field(&mut self, access_id: &str, field: &str, value: Scalar) -> Result<(), UdfError> {
        let access = self
            .accesses
            .iter()
            .find(|a| a.access_id == access_id && a.kind == AccessKind::Write)
            .ok_or_else(|| UdfError::NotWritable(access_id.to_owned()))?;
        let state = access.target_state().to_owned();
        let key = self.key_for(access, &state).ok_or_else(|| UdfError::UndeclaredState(state.clone()))?;
        self.stage(key, field, value)
    }

    fn stage(&mut self, key: StateKey, field: &str, value: Scalar) -> Result<(), UdfError> {
        if self.abort_reason.is_some() {
            return Err(UdfError::Aborted);
        }
        let schema = self.schema(&key.state_id)?;
        let def = schema.field(field).ok_or_else(|| UdfError::FieldNotInSchema {
            state: key.state_id.clone(),
            field: field.to_owned(),
        })?;
        if def.kind != value.kind() {
            return Err(UdfError::TypeMismatch { state: key.state_id.clone(), field: field.to_owned() });
        }
        if !self.staged.contains_key(&key) {
            let base = self.reads.get(&key).cloned().unwrap_or_else(|| schema.default_record());
            self.staged.insert(key.clone(), base);
        }
        self.staged.get_mut(&key).expect("staged above").insert(field.to_owned(), value);
        Ok(())
    }

    pub fn abort_txn(&mut self, reason: impl Into<String>) {
        if self.abort_reason.is_none() {
            self.abort_reason = Some(reason.into());
        }
    }

    pub fn is_aborted(&self) -> bool {
        self.abort_reason.is_some()
    }

    /// Emits an event (an alarm, a host notification) that is delivered
    /// even if the transaction aborts.
    pub fn notify(&mut self, event: impl Into<String>) {
        self.notifications.push(event.into());
    }

    /// Value handed back to the per-flow side when the transaction commits.
    pub fn set_result(&mut self, name: &str, value: Scalar) {
        self.results.insert(name.to_owned(), value);
    }

    pub fn staged_writes(&self) -> &BTreeMap<StateKey, FieldMap> {
        &self.staged
    }

    pub fn finish(self) -> HolderOutput {
        HolderOutput {
            staged: self.staged,
            abort_reason: self.abort_reason,
            notifications: self.notifications,
            results: self.results,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HolderOutput {
    pub staged: BTreeMap<StateKey, FieldMap>,
    pub abort_reason: Option<String>,
    pub notifications: Vec<String>,
    pub results: FieldMap,
}

/// Cross-flow processing logic of a VNF.
pub trait CrossFlowUdf: Send + Sync {
    fn run(&self, holder: &mut DataHolder<'_>) -> Result<(), UdfError>;
}

impl<F> CrossFlowUdf for F
where
    F: Fn(&mut DataHolder<'_>) -> Result<(), UdfError> + Send + Sync,
{
    fn run(&self, holder: &mut DataHolder<'_>) -> Result<(), UdfError> {
        self(holder)
    }
}

/// Runs `udf` over `holder`, turning errors and panics into an abort.
pub fn run_cross_flow_udf(udf: &dyn CrossFlowUdf, holder: &mut DataHolder<'_>) {
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| udf.run(holder)));
    match outcome {
        Ok(Ok(())) => {}
        Ok(Err(e)) => holder.abort_txn(e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| (*s).to_owned())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_owned());
            holder.abort_txn(format!("udf panic: {msg}"));
        }
    }
}
