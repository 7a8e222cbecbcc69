// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Traffic generation, the wire codec, experiment runs and benchmarks.

pub mod codec;
mod experiment;
mod metrics;
pub mod traffic;

pub use experiment::{
    bench, bench_csv, run_experiment, write_run, BenchCell, BenchMatrix, BenchRow, ExperimentConfig, RunOutput,
    ScaleEvent, BENCH_COLUMNS,
};
pub use metrics::{metrics_csv, METRICS_COLUMNS};
