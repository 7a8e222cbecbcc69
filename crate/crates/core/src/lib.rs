// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Transactional state for stateful service function chains.
//!
//! Per-flow work runs on the instance that owns the flow. Accesses to state
//! shared across flows are collected per batch into transactions, ordered
//! into a dependency graph and executed by a pool of executors with results
//! equal to processing the batch one request at a time.

pub mod engine;
pub mod executor;
pub mod harness;
pub mod job;
pub mod resilience;
pub mod scheduler;
pub mod store;
pub mod tpg;
pub mod value;
pub mod vnf;
