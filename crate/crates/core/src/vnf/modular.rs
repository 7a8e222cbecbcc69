// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! VNF modularization: VNF logic declared as DAGs of named modules, with
//! identical sub-pipelines shared across VNFs and placed to minimize
//! cross-executor edges.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub name: String,
    /// Upstream modules of the same VNF.
    pub inputs: Vec<String>,
}

impl ModuleSpec {
    pub fn new(name: &str, inputs: &[&str]) -> Self {
        ModuleSpec { name: name.to_owned(), inputs: inputs.iter().map(|s| (*s).to_owned()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VnfModules {
    pub vnf_id: String,
    pub modules: Vec<ModuleSpec>,
}

impl VnfModules {
    /// A linear pipeline `names[0] → names[1] → …`.
    pub fn pipeline(vnf_id: &str, names: &[&str]) -> Self {
        let modules = names
            .iter()
            .enumerate()
            .map(|(i, n)| ModuleSpec::new(n, if i == 0 { &[] } else { &names[i - 1..i] }))
            .collect();
        VnfModules { vnf_id: vnf_id.to_owned(), modules }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModularError {
    #[error("VNF `{vnf}` declares module `{module}` twice")]
    DuplicateModule { vnf: String, module: String },
    #[error("VNF `{vnf}`: module `{module}` reads unknown module `{input}`")]
    UnknownInput { vnf: String, module: String, input: String },
    #[error("VNF `{0}` has a module cycle")]
    Cycle(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergedModule {
    pub name: String,
    /// Name plus the signatures of all upstream modules; equal signatures
    /// compute equal values.
    pub signature: String,
    pub consumers: BTreeSet<String>,
}

impl MergedModule {
    pub fn is_shared(&self) -> bool {
        self.consumers.len() > 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModuleGraph {
    /// In topological order.
    pub modules: Vec<MergedModule>,
    pub edges: BTreeSet<(usize, usize)>,
    /// VNF → module name → merged module id.
    pub mapping: BTreeMap<String, BTreeMap<String, usize>>,
    /// Merged module id → executor.
    pub placement: BTreeMap<usize, usize>,
    /// VNF → its home executor.
    pub homes: BTreeMap<String, usize>,
}

fn topo_order(v: &VnfModules) -> Result<Vec<usize>, ModularError> {
    let index: BTreeMap<&str, usize> = v.modules.iter().enumerate().map(|(i, m)| (m.name.as_str(), i)).collect();
    if index.len() != v.modules.len() {
        let mut seen = BTreeSet::new();
        let dup = v.modules.iter().find(|m| !seen.insert(&m.name)).expect("a duplicate exists");
        return Err(ModularError::DuplicateModule { vnf: v.vnf_id.clone(), module: dup.name.clone() });
    }
    let mut indeg = vec![0usize; v.modules.len()];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); v.modules.len()];
    for (i, m) in v.modules.iter().enumerate() {
        for inp in &m.inputs {
            let &j = index.get(inp.as_str()).ok_or_else(|| ModularError::UnknownInput {
                vnf: v.vnf_id.clone(),
                module: m.name.clone(),
                input: inp.clone(),
            })?;
            succ[j].push(i);
            indeg[i] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (0..indeg.len()).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(indeg.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &s in &succ[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    if order.len() != v.modules.len() {
        return Err(ModularError::Cycle(v.vnf_id.clone()));
    }
    Ok(order)
}

/// Merges modules with equal names and equal upstream signatures across
/// VNFs, then places every merged module on one of `executors` workers.
///
/// Each VNF has a home executor (declaration index modulo `executors`).
/// Unshared modules stay home; a shared module goes to the home of the
/// consumer with the most edges into it, ties broken by VNF id.
pub fn modularize(vnfs: &[VnfModules], executors: usize) -> Result<ModuleGraph, ModularError> {
    let executors = executors.max(1);
    let mut modules: Vec<MergedModule> = Vec::new();
    let mut by_signature: BTreeMap<String, usize> = BTreeMap::new();
    let mut edges = BTreeSet::new();
    let mut mapping: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut homes = BTreeMap::new();

    for (vi, v) in vnfs.iter().enumerate() {
        homes.insert(v.vnf_id.clone(), vi % executors);
        let order = topo_order(v)?;
        let mut sig_of: BTreeMap<&str, String> = BTreeMap::new();
        let mut local: BTreeMap<String, usize> = BTreeMap::new();
        for i in order {
            let m = &v.modules[i];
            let mut ups: Vec<&str> = m.inputs.iter().map(|n| sig_of[n.as_str()].as_str()).collect();
            ups.sort_unstable();
            let signature = format!("{}({})", m.name, ups.join(","));
            let id = *by_signature.entry(signature.clone()).or_insert_with(|| {
                modules.push(MergedModule { name: m.name.clone(), signature: signature.clone(), consumers: BTreeSet::new() });
                modules.len() - 1
            });
            modules[id].consumers.insert(v.vnf_id.clone());
            for inp in &m.inputs {
                edges.insert((local[inp], id));
            }
            local.insert(m.name.clone(), id);
            sig_of.insert(&m.name, signature);
        }
        mapping.insert(v.vnf_id.clone(), local);
    }

    let mut placement = BTreeMap::new();
    for (id, m) in modules.iter().enumerate() {
        let owner = if m.is_shared() {
            m.consumers
                .iter()
                .max_by_key(|vnf| {
                    let own: BTreeSet<usize> = mapping[*vnf].values().copied().filter(|&o| o != id).collect();
                    let touching = edges.iter().filter(|(a, b)| (*a == id && own.contains(b)) || (*b == id && own.contains(a))).count();
                    (touching, std::cmp::Reverse((*vnf).clone()))
                })
                .expect("shared modules have consumers")
        } else {
            m.consumers.first().expect("every module has a consumer")
        };
        placement.insert(id, homes[owner]);
    }
    Ok(ModuleGraph { modules, edges, mapping, placement, homes })
}

impl ModuleGraph {
    pub fn shared(&self) -> impl Iterator<Item = &MergedModule> {
        self.modules.iter().filter(|m| m.is_shared())
    }

    /// Edges whose endpoints sit on different executors.
    pub fn cross_edges(&self) -> usize {
        self.edges.iter().filter(|(a, b)| self.placement[a] != self.placement[b]).count()
    }

    /// Evaluates every merged module once, in topological order.
    ///
    /// `f(name, inputs)` computes a module's value from its upstream values,
    /// listed in the order the module declared them. Returns each VNF's
    /// module values and the number of module invocations.
    pub fn execute<V: Clone>(
        &self,
        vnfs: &[VnfModules],
        mut f: impl FnMut(&str, &[V]) -> V,
    ) -> (ModuleValues<V>, usize) {
        let mut values: Vec<Option<V>> = vec![None; self.modules.len()];
        let mut invocations = 0;
        let mut out: ModuleValues<V> = BTreeMap::new();
        for v in vnfs {
            let local = &self.mapping[&v.vnf_id];
            let order = topo_order(v).expect("graph was built from these declarations");
            for i in order {
                let m = &v.modules[i];
                let id = local[&m.name];
                if values[id].is_none() {
                    let inputs: Vec<V> = m
                        .inputs
                        .iter()
                        .map(|n| values[local[n]].clone().expect("inputs evaluated first"))
                        .collect();
                    values[id] = Some(f(&m.name, &inputs));
                    invocations += 1;
                }
                out.entry(v.vnf_id.clone())
                    .or_default()
                    .insert(m.name.clone(), values[id].clone().expect("just evaluated"));
            }
        }
        (out, invocations)
    }
}

/// VNF → module name → value.
pub type ModuleValues<V> = BTreeMap<String, BTreeMap<String, V>>;

/// Runs every VNF's module DAG independently, without sharing.
pub fn execute_unmerged<V: Clone>(
    vnfs: &[VnfModules],
    mut f: impl FnMut(&str, &[V]) -> V,
) -> Result<(ModuleValues<V>, usize), ModularError> {
    let mut out: ModuleValues<V> = BTreeMap::new();
    let mut invocations = 0;
    for v in vnfs {
        let mut vals: BTreeMap<String, V> = BTreeMap::new();
        for i in topo_order(v)? {
            let m = &v.modules[i];
            let inputs: Vec<V> = m.inputs.iter().map(|n| vals[n].clone()).collect();
            vals.insert(m.name.clone(), f(&m.name, &inputs));
            invocations += 1;
        }
        out.insert(v.vnf_id.clone(), vals);
    }
    Ok((out, invocations))
}

/// The two intrusion detectors as module pipelines sharing their front end.
pub fn ids_module_graphs() -> Vec<VnfModules> {
    vec![
        VnfModules::pipeline("trojan detector", &["header-parser", "flow-classifier", "pattern-matcher"]),
        VnfModules::pipeline("portscan detector", &["header-parser", "flow-classifier", "likelihood-estimator"]),
    ]
}
