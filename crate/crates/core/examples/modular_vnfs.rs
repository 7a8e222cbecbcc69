// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Merges the two detectors' module pipelines so their shared front end
//! runs once, and checks the merged evaluation against separate ones.

use chainstate::vnf::modular::{execute_unmerged, ids_module_graphs, modularize};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vnfs = ids_module_graphs();
    let graph = modularize(&vnfs, 2)?;
    for (id, m) in graph.modules.iter().enumerate() {
        println!("{id}: {:<22} executor {} used by {:?}", m.name, graph.placement[&id], m.consumers);
    }
    println!("edges crossing executors: {}", graph.cross_edges());

    // each module appends its name to the joined inputs
    let f = |name: &str, inputs: &[String]| format!("{}>{name}", inputs.join("+"));
    let (merged, merged_calls) = graph.execute(&vnfs, f);
    let (separate, separate_calls) = execute_unmerged(&vnfs, f)?;
    println!("invocations merged {merged_calls}, separate {separate_calls}");
    println!("same values: {}", merged == separate);
    Ok(())
}
