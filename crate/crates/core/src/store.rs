// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Centralized multi-version store for cross-flow states.
//!
//! Every key keeps an ordered history of versions tagged with the global
//! sequence number of the transaction that wrote them. A read at sequence
//! `s` observes the newest version strictly below `s`, so the store can
//! answer reads for any position in the serialization order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::job::{StateSchema, ValidatedJob};
use crate::value::FieldMap;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey {
    pub state_id: String,
    pub key: String,
}

impl StateKey {
    pub fn new(state_id: impl Into<String>, key: impl Into<String>) -> Self {
        StateKey { state_id: state_id.into(), key: key.into() }
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.state_id, self.key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Version {
    pub seq: u64,
    pub value: FieldMap,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("state `{0}` is not registered")]
    UnknownKey(String),
    #[error("{key} already has a version at seq {seq}")]
    DuplicateSeq { key: StateKey, seq: u64 },
    #[error("epoch {0} is still in flight")]
    EpochNotQuiesced(u64),
    #[error("gc below {before} would break the snapshot at seq {snapshot_seq}")]
    WouldBreakSnapshot { before: u64, snapshot_seq: u64 },
    #[error("malformed snapshot document: {0}")]
    BadSnapshot(String),
}

/// Point-in-time copy of the latest committed value of every key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: u64,
    pub high_seq: u64,
    /// state_id → key → record. Both levels sorted.
    pub state: BTreeMap<String, BTreeMap<String, FieldMap>>,
}

impl Snapshot {
    pub fn get(&self, key: &StateKey) -> Option<&FieldMap> {
        self.state.get(&key.state_id)?.get(&key.key)
    }

    pub fn len(&self) -> usize {
        self.state.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Snapshot, StoreError> {
        serde_json::from_str(text).map_err(|e| StoreError::BadSnapshot(e.to_string()))
    }

    /// Hash of the state map alone; equal for equal committed states no
    /// matter which epoch or sequence number they were captured at.
    pub fn state_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.state).expect("state serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CacheClassKind {
    CachedReadMostly,
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheClass {
    pub state_id: String,
    pub class: CacheClassKind,
    pub read_ratio: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccessCounts {
    pub reads: u64,
    pub writes: u64,
}

pub const DEFAULT_CACHE_THRESHOLD: f64 = 0.9;

/// Labels each state read-mostly (eligible for executor-local caching) when
/// its read share of the batch reaches `threshold`. The boundary is
/// inclusive; untouched states stay centralized.
pub fn classify_cacheability(
    batch_stats: &BTreeMap<String, AccessCounts>,
    threshold: f64,
) -> Vec<CacheClass> {
    batch_stats
        .iter()
        .map(|(state_id, c)| {
            let total = c.reads + c.writes;
            let read_ratio = if total == 0 { 0.0 } else { c.reads as f64 / total as f64 };
            let class = if total > 0 && read_ratio >= threshold {
                CacheClassKind::CachedReadMostly
            } else {
                CacheClassKind::Centralized
            };
            CacheClass { state_id: state_id.clone(), class, read_ratio }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct VersionedStore {
    schemas: Arc<BTreeMap<String, StateSchema>>,
    data: HashMap<StateKey, Vec<Version>>,
    high_seq: u64,
    open_epoch: Option<u64>,
    /// epoch → high_seq of snapshots that gc must keep restorable.
    retained: BTreeMap<u64, u64>,
    /// Per-flow records parked centrally while a migration is in progress.
    migration_area: BTreeMap<(String, String), FieldMap>,
}

impl VersionedStore {
    pub fn new(schemas: impl IntoIterator<Item = StateSchema>) -> Self {
        let schemas = schemas.into_iter().map(|s| (s.state_id.clone(), s)).collect();
        VersionedStore {
            schemas: Arc::new(schemas),
            data: HashMap::new(),
            high_seq: 0,
            open_epoch: None,
            retained: BTreeMap::new(),
            migration_area: BTreeMap::new(),
        }
    }

    pub fn for_job(job: &ValidatedJob) -> Self {
        Self::new(job.schemas.iter().cloned())
    }

    pub fn schema(&self, state_id: &str) -> Option<&StateSchema> {
        self.schemas.get(state_id)
    }

    pub fn high_seq(&self) -> u64 {
        self.high_seq
    }

    pub fn open_epoch(&self) -> Option<u64> {
        self.open_epoch
    }

    fn check_key(&self, key: &StateKey) -> Result<&StateSchema, StoreError> {
        self.schemas.get(&key.state_id).ok_or_else(|| StoreError::UnknownKey(key.state_id.clone()))
    }

    /// Newest version of `key` strictly below `seq`, if any.
    pub fn version_before(&self, key: &StateKey, seq: u64) -> Result<Option<&Version>, StoreError> {
        self.check_key(key)?;
        let Some(versions) = self.data.get(key) else {
            return Ok(None);
        };
        let idx = versions.partition_point(|v| v.seq < seq);
        Ok(idx.checked_sub(1).map(|i| &versions[i]))
    }

    /// Value visible to a reader at `seq`; the schema default when the key
    /// has no earlier version.
    pub fn read_at(&self, key: &StateKey, seq: u64) -> Result<FieldMap, StoreError> {
        let schema = self.check_key(key)?;
        Ok(match self.version_before(key, seq)? {
            Some(v) => v.value.clone(),
            None => schema.default_record(),
        })
    }

    pub fn latest(&self, key: &StateKey) -> Result<FieldMap, StoreError> {
        self.read_at(key, u64::MAX)
    }

    pub fn write_at(&mut self, key: StateKey, seq: u64, value: FieldMap) -> Result<(), StoreError> {
        self.check_key(&key)?;
        if let Some(existing) = self.data.get(&key) {
            if existing.binary_search_by_key(&seq, |v| v.seq).is_ok() {
                return Err(StoreError::DuplicateSeq { key, seq });
            }
        }
        let versions = self.data.entry(key).or_default();
        let idx = versions.partition_point(|v| v.seq < seq);
        versions.insert(idx, Version { seq, value });
        self.high_seq = self.high_seq.max(seq);
        Ok(())
    }

    pub fn history(&self, key: &StateKey) -> &[Version] {
        self.data.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn keys(&self) -> impl Iterator<Item = &StateKey> {
        self.data.keys()
    }

    pub fn version_count(&self) -> usize {
        self.data.values().map(Vec::len).sum()
    }

    pub fn begin_epoch(&mut self, epoch: u64) -> Result<(), StoreError> {
        if let Some(open) = self.open_epoch {
            return Err(StoreError::EpochNotQuiesced(open));
        }
        self.open_epoch = Some(epoch);
        Ok(())
    }

    pub fn end_epoch(&mut self) {
        self.open_epoch = None;
    }

    /// Latest committed values without registering a retained snapshot.
    pub fn export(&self, epoch: u64) -> Snapshot {
        let mut state: BTreeMap<String, BTreeMap<String, FieldMap>> = BTreeMap::new();
        for (k, versions) in &self.data {
            if let Some(v) = versions.last() {
                state.entry(k.state_id.clone()).or_default().insert(k.key.clone(), v.value.clone());
            }
        }
        Snapshot { epoch, high_seq: self.high_seq, state }
    }

    pub fn take_snapshot(&mut self, epoch: u64) -> Result<Snapshot, StoreError> {
        if let Some(open) = self.open_epoch {
            return Err(StoreError::EpochNotQuiesced(open));
        }
        let snap = self.export(epoch);
        self.retained.insert(epoch, snap.high_seq);
        Ok(snap)
    }

    pub fn release_snapshot(&mut self, epoch: u64) {
        self.retained.remove(&epoch);
    }

    /// Rolls the store back to `snapshot`. Versions above its `high_seq` are
    /// dropped; keys whose remaining history disagrees with the snapshot
    /// (for example after restoring into a fresh store) are reset to the
    /// snapshot value.
    pub fn restore_snapshot(&mut self, snapshot: &Snapshot) -> Result<(), StoreError> {
        if let Some(open) = self.open_epoch {
            return Err(StoreError::EpochNotQuiesced(open));
        }
        for versions in self.data.values_mut() {
            let keep = versions.partition_point(|v| v.seq <= snapshot.high_seq);
            versions.truncate(keep);
        }
        self.data.retain(|k, versions| {
            !versions.is_empty() && snapshot.get(k).is_some()
        });
        for (state_id, keys) in &snapshot.state {
            if !self.schemas.contains_key(state_id) {
                return Err(StoreError::UnknownKey(state_id.clone()));
            }
            for (key, value) in keys {
                let sk = StateKey::new(state_id.clone(), key.clone());
                let versions = self.data.entry(sk).or_default();
                if versions.last().map(|v| &v.value) != Some(value) {
                    match versions.last_mut() {
                        Some(last) if last.seq == snapshot.high_seq => last.value = value.clone(),
                        _ => versions.push(Version { seq: snapshot.high_seq, value: value.clone() }),
                    }
                }
            }
        }
        self.high_seq = snapshot.high_seq;
        self.retained.retain(|_, hs| *hs <= snapshot.high_seq);
        self.retained.insert(snapshot.epoch, snapshot.high_seq);
        Ok(())
    }

    /// Drops versions that no reader at `before_seq` or later can observe:
    /// per key, everything below the cutoff except the newest such version.
    pub fn gc(&mut self, before_seq: u64) -> Result<usize, StoreError> {
        if let Some((_, &snapshot_seq)) = self.retained.iter().min_by_key(|(_, hs)| **hs) {
            if before_seq > snapshot_seq {
                return Err(StoreError::WouldBreakSnapshot { before: before_seq, snapshot_seq });
            }
        }
        let mut removed = 0;
        for versions in self.data.values_mut() {
            let below = versions.partition_point(|v| v.seq < before_seq);
            if below > 1 {
                versions.drain(..below - 1);
                removed += below - 1;
            }
        }
        Ok(removed)
    }

    pub fn park_migrating(&mut self, vnf_id: &str, flow: &str, record: FieldMap) {
        self.migration_area.insert((vnf_id.to_owned(), flow.to_owned()), record);
    }

    pub fn unpark_migrating(&mut self, vnf_id: &str, flow: &str) -> Option<FieldMap> {
        self.migration_area.remove(&(vnf_id.to_owned(), flow.to_owned()))
    }

    pub fn parked_count(&self) -> usize {
        self.migration_area.len()
    }
}
