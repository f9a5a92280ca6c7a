//! Stage-level grouping: filter the circuit graph down to current-conducting
//! edges, enumerate simple VDD-to-GND conduction paths, merge paths that
//! share a non-rail node into stages, and build the stage interconnection
//! graph over shared nets.
//!
//! Gate and capacitor edges are removed for conduction but still count for
//! stage-to-stage coupling: a drain net driving another stage's gate links
//! the two stages even though no DC current flows.

use crate::graph::{CircuitGraph, NetTag, NodeId, NodeKind};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub const DEFAULT_PATH_CAP: usize = 100_000;

#[derive(Debug, Error)]
pub enum StageError {
    #[error("conduction path enumeration exceeded the cap of {0} paths")]
    PathExplosion(usize),
    #[error("no VDD-to-GND conduction path exists")]
    NoConductionPath,
    #[error("graph has no tagged {0} rail")]
    MissingRail(&'static str),
    #[error("stages overlap on device `{0}`")]
    OverlappingStages(String),
}

/// The current-conduction subgraph: adjacency over nodes incident to at
/// least one conducting edge, plus the rails.
#[derive(Debug, Clone)]
pub struct ConductionGraph {
    labels: Vec<String>,
    device_side: Vec<bool>,
    /// Neighbor lists sorted by neighbor label, deduplicated.
    adj: Vec<Vec<usize>>,
    vdd: usize,
    gnd: usize,
    /// Maps local indices back to graph node ids (when built from a graph).
    origin: Option<Vec<NodeId>>,
}

impl ConductionGraph {
    /// Build directly from parts; used by synthetic-oracle tests.
    pub fn from_parts(
        labels: Vec<(String, bool)>,
        edges: &[(usize, usize)],
        vdd: usize,
        gnd: usize,
    ) -> Self {
        let device_side: Vec<bool> = labels.iter().map(|(_, d)| *d).collect();
        let names: Vec<String> = labels.into_iter().map(|(n, _)| n).collect();
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); names.len()];
        for &(a, b) in edges {
            debug_assert_ne!(device_side[a], device_side[b], "edges must be bipartite");
            adj[a].insert(b);
            adj[b].insert(a);
        }
        let mut cg = ConductionGraph {
            labels: names,
            device_side,
            adj: adj.into_iter().map(|s| s.into_iter().collect()).collect(),
            vdd,
            gnd,
            origin: None,
        };
        cg.sort_adjacency();
        cg
    }

    fn sort_adjacency(&mut self) {
        let labels = self.labels.clone();
        for list in &mut self.adj {
            list.sort_by(|a, b| labels[*a].cmp(&labels[*b]));
            list.dedup();
        }
    }

    pub fn label(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_device_side(&self, idx: usize) -> bool {
        self.device_side[idx]
    }

    pub fn vdd(&self) -> usize {
        self.vdd
    }

    pub fn gnd(&self) -> usize {
        self.gnd
    }

    pub fn node_id(&self, idx: usize) -> Option<NodeId> {
        self.origin.as_ref().map(|o| o[idx])
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }
}

/// Drop all non-conducting edges (C, MOS gate, auxiliary bulk, and
/// non-conducting supernode ports); keep nodes incident to what remains,
/// plus the rails.
pub fn conduction_graph(g: &CircuitGraph) -> Result<ConductionGraph, StageError> {
    let vdd = g.vdd().ok_or(StageError::MissingRail("VDD"))?;
    let gnd = g.gnd().ok_or(StageError::MissingRail("GND"))?;

    let mut keep: BTreeSet<NodeId> = BTreeSet::new();
    keep.insert(vdd);
    keep.insert(gnd);
    let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
    for edge in g.edges() {
        if edge.label.conducts() {
            keep.insert(edge.device);
            keep.insert(edge.net);
            edges.push((edge.device, edge.net));
        }
    }

    let ids: Vec<NodeId> = keep.into_iter().collect();
    let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let labels: Vec<(String, bool)> = ids
        .iter()
        .map(|id| {
            let node = g.node(*id);
            (node.label.clone(), node.kind.is_device_side())
        })
        .collect();
    let local_edges: Vec<(usize, usize)> = edges
        .iter()
        .map(|(a, b)| (index[a], index[b]))
        .collect();
    let mut cg = ConductionGraph::from_parts(labels, &local_edges, index[&vdd], index[&gnd]);
    cg.origin = Some(ids);
    Ok(cg)
}

/// All simple VDD-to-GND paths as node index sequences, in lexicographic
/// DFS order. Errors with `PathExplosion` beyond `cap` paths and
/// `NoConductionPath` when none exist.
pub fn enumerate_paths(cg: &ConductionGraph, cap: usize) -> Result<Vec<Vec<usize>>, StageError> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut visited = vec![false; cg.len()];
    let mut path = Vec::new();
    dfs(cg, cg.vdd, &mut visited, &mut path, &mut out, cap)?;
    if out.is_empty() {
        return Err(StageError::NoConductionPath);
    }
    Ok(out)
}

fn dfs(
    cg: &ConductionGraph,
    node: usize,
    visited: &mut Vec<bool>,
    path: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
    cap: usize,
) -> Result<(), StageError> {
    visited[node] = true;
    path.push(node);
    if node == cg.gnd {
        if out.len() >= cap {
            return Err(StageError::PathExplosion(cap));
        }
        out.push(path.clone());
    } else {
        for &next in &cg.adj[node] {
            if !visited[next] && next != cg.vdd {
                dfs(cg, next, visited, path, out, cap)?;
            }
        }
    }
    path.pop();
    visited[node] = false;
    Ok(())
}

/// One functional stage: the union of an equivalence class of conduction
/// paths, rails excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub id: String,
    /// Node indices into the conduction graph, rails excluded.
    pub members: BTreeSet<usize>,
    pub contains_primary_input: bool,
    pub contains_primary_output: bool,
}

/// Merge paths sharing a non-rail node (union-find); each class's node
/// union is one stage. Stages are sorted by their smallest member label.
pub fn merge_stages(cg: &ConductionGraph, paths: &[Vec<usize>]) -> Vec<Stage> {
    let mut parent: Vec<usize> = (0..paths.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }

    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    for (pi, path) in paths.iter().enumerate() {
        for &node in path {
            if node == cg.vdd || node == cg.gnd {
                continue;
            }
            match owner.get(&node) {
                Some(&other) => {
                    let a = find(&mut parent, pi);
                    let b = find(&mut parent, other);
                    parent[a] = b;
                }
                None => {
                    owner.insert(node, pi);
                }
            }
        }
    }

    let mut classes: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (pi, path) in paths.iter().enumerate() {
        let root = find(&mut parent, pi);
        let class = classes.entry(root).or_default();
        for &node in path {
            if node != cg.vdd && node != cg.gnd {
                class.insert(node);
            }
        }
    }

    let mut stages: Vec<BTreeSet<usize>> = classes.into_values().collect();
    stages.sort_by_key(|members| {
        members
            .iter()
            .map(|&n| cg.label(n).to_string())
            .min()
            .unwrap_or_default()
    });
    stages
        .into_iter()
        .enumerate()
        .map(|(i, members)| Stage {
            id: format!("stage{}", i + 1),
            members,
            contains_primary_input: false,
            contains_primary_output: false,
        })
        .collect()
}

/// An inter-stage edge annotated with the shared nets realizing it.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEdge {
    pub a: String,
    pub b: String,
    pub nets: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct StageGraph {
    pub edges: Vec<StageEdge>,
}

/// Build the stage interconnection graph over the full circuit graph: two
/// stages are linked iff some non-rail net has device-side neighbors in
/// both (gate edges included: signal coupling counts even though current
/// does not flow). Also flags stages touching declared primary I/O nets.
pub fn stage_graph(
    g: &CircuitGraph,
    cg: &ConductionGraph,
    stages: &mut [Stage],
    inputs: &[String],
    outputs: &[String],
) -> Result<StageGraph, StageError> {
    // Map stage members back to graph node ids, checking device disjointness.
    let mut device_stage: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut member_ids: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); stages.len()];
    for (si, stage) in stages.iter().enumerate() {
        for &local in &stage.members {
            let Some(id) = cg.node_id(local) else { continue };
            member_ids[si].insert(id);
            if cg.is_device_side(local) && device_stage.insert(id, si).is_some() {
                return Err(StageError::OverlappingStages(cg.label(local).to_string()));
            }
        }
    }

    let lower = |names: &[String]| -> BTreeSet<String> {
        names.iter().map(|n| n.to_ascii_lowercase()).collect()
    };
    let input_set = lower(inputs);
    let output_set = lower(outputs);

    let mut pair_nets: BTreeMap<(usize, usize), BTreeSet<String>> = BTreeMap::new();
    for net in g.net_nodes() {
        if matches!(net.kind, NodeKind::Net(NetTag::Gnd) | NodeKind::Net(NetTag::Vdd)) {
            continue; // rails never create stage edges
        }
        let mut touching: BTreeSet<usize> = BTreeSet::new();
        for edge in g.incident_edges(net.id) {
            if let Some(&si) = device_stage.get(&edge.device) {
                touching.insert(si);
            }
        }
        let list: Vec<usize> = touching.into_iter().collect();
        for i in 0..list.len() {
            for j in (i + 1)..list.len() {
                pair_nets
                    .entry((list[i], list[j]))
                    .or_default()
                    .insert(net.label.clone());
            }
        }
    }

    // Primary I/O flags: a stage touches an I/O net through any member
    // device edge, or contains the net itself.
    for (si, stage) in stages.iter_mut().enumerate() {
        let mut touched: BTreeSet<String> = BTreeSet::new();
        for id in &member_ids[si] {
            let node = g.node(*id);
            if node.kind.is_device_side() {
                for edge in g.incident_edges(*id) {
                    touched.insert(g.node(edge.net).label.to_ascii_lowercase());
                }
            } else {
                touched.insert(node.label.to_ascii_lowercase());
            }
        }
        stage.contains_primary_input = touched.iter().any(|n| input_set.contains(n));
        stage.contains_primary_output = touched.iter().any(|n| output_set.contains(n));
    }

    let edges = pair_nets
        .into_iter()
        .map(|((a, b), nets)| StageEdge {
            a: stages[a].id.clone(),
            b: stages[b].id.clone(),
            nets: nets.into_iter().collect(),
        })
        .collect();
    Ok(StageGraph { edges })
}

/// Device-side nodes on no conduction path (floating caps, gate-only
/// devices). Reported rather than dropped.
pub fn unstaged_nodes(g: &CircuitGraph, cg: &ConductionGraph, stages: &[Stage]) -> Vec<String> {
    let mut staged: BTreeSet<String> = BTreeSet::new();
    for stage in stages {
        for &local in &stage.members {
            staged.insert(cg.label(local).to_string());
        }
    }
    let mut out: Vec<String> = g
        .device_side_nodes()
        .filter(|n| !staged.contains(&n.label))
        .map(|n| n.label.clone())
        .collect();
    out.sort();
    out
}
