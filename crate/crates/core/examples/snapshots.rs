// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Multi-version store: writes at sequence numbers, reads as of a point in
//! the batch, takes and restores a snapshot, and garbage-collects history.

use chainstate::job::{AccessScope, FieldDef, StateSchema};
use chainstate::store::{Snapshot, StateKey, VersionedStore};
use chainstate::tpg::make_seq;
use chainstate::value::{FieldMap, Scalar};

fn record(v: i64) -> FieldMap {
    FieldMap::from([("val".to_owned(), Scalar::Int(v))])
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = StateSchema::new("kv", "key", vec![FieldDef::int("val")], AccessScope::CrossFlow);
    let mut store = VersionedStore::new([schema]);
    let key = StateKey::new("kv", "h0");

    store.begin_epoch(1)?;
    for (i, v) in [10, 20, 30].into_iter().enumerate() {
        store.write_at(key.clone(), make_seq(1, i as u32 * 2), record(v))?;
    }
    store.end_epoch();
    // a read sees the newest version strictly before its own position
    println!("as of op 3: {:?}", store.read_at(&key, make_seq(1, 3))?);
    println!("latest:     {:?}", store.latest(&key)?);

    let snap = store.take_snapshot(1)?;
    let text = snap.to_json();
    println!("snapshot {} ({} keys)", snap.state_hash(), snap.len());

    store.begin_epoch(2)?;
    store.write_at(key.clone(), make_seq(2, 0), record(99))?;
    store.end_epoch();
    store.restore_snapshot(&Snapshot::from_json(&text)?)?;
    println!("after restore: {:?}", store.latest(&key)?);
    // pinned history survives gc until the snapshot is released
    assert!(store.gc(make_seq(2, 0)).is_err());
    store.release_snapshot(1);
    println!("versions dropped by gc: {}", store.gc(make_seq(2, 0))?);
    Ok(())
}
