// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write;

use crate::engine::StageMetrics;

pub const METRICS_COLUMNS: &str =
    "batch,stage,strategy,granularity,executors,txns,commits,aborts,throughput_tps,p50_us,p99_us,cache_hit,state_hash";

/// One row per executed `(batch, stage)`. Stages without transactions show
/// `-` for the strategy columns.
pub fn metrics_csv(rows: &[StageMetrics]) -> String {
    let mut out = String::from(METRICS_COLUMNS);
    out.push('\n');
    for r in rows {
        let (exploration, granularity) = match r.strategy {
            Some(s) => (s.exploration.to_string(), s.granularity.to_string()),
            None => ("-".to_owned(), "-".to_owned()),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.1},{:.3},{:.3},{:.4},{}",
            r.batch,
            r.stage,
            exploration,
            granularity,
            r.executors,
            r.txns,
            r.commits,
            r.aborts,
            r.throughput_tps,
            r.p50_us,
            r.p99_us,
            r.cache_hit,
            r.state_hash
        )
        .expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{Exploration, Granularity, ScheduleStrategy};

    #[test]
    fn fixed_columns() {
        let row = StageMetrics {
            batch: 3,
            stage: 1,
            strategy: Some(ScheduleStrategy::new(Exploration::Dfs, Granularity::Grouped)),
            executors: 4,
            txns: 10,
            commits: 9,
            aborts: 1,
            throughput_tps: 1234.56,
            p50_us: 1.0,
            p99_us: 2.5,
            cache_hit: 0.5,
            state_hash: "ab".into(),
        };
        let csv = metrics_csv(&[row]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0].split(',').count(), 13);
        assert_eq!(lines[1], "3,1,dfs,grouped,4,10,9,1,1234.6,1.000,2.500,0.5000,ab");
    }
}
