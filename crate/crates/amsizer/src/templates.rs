//! Analog building-block detection: labeled subgraph isomorphism against a
//! data-driven template library, overlap resolution, and supernode collapse.
//!
//! Matching is a backtracking search with degree-ordered pattern devices and
//! name-sorted candidate iteration, so results are deterministic. Net binding
//! is injective; a pattern net marked `internal` additionally requires the
//! bound net to connect only to matched member devices (a cascode mid node
//! must not be tapped from outside, otherwise a plain stacked pair such as a
//! tail device under an input pair would count as a cascode).

use crate::graph::{CircuitGraph, Edge, EdgeLabel, GraphError, NetTag, NodeId, NodeKind};
use crate::netlist::{DeviceKind, TerminalRole};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("template library: {0}")]
    Library(String),
    #[error("device `{0}` is bound by more than one match")]
    OverlappingMatches(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    N,
    P,
}

#[derive(Debug, Clone)]
pub struct PortSpec {
    pub role: String,
    pub conducts: bool,
    pub internal: bool,
    pub not_rail: bool,
}

#[derive(Debug, Clone)]
pub struct PatternDevice {
    pub id: String,
    pub kind: DeviceKind,
    /// (label code, pattern net index)
    pub edges: Vec<(String, usize)>,
}

#[derive(Debug, Clone)]
pub struct PatternNet {
    pub id: String,
    pub port: PortSpec,
    /// Rail requirement from the node kind: `vdd`/`gnd` bind only the tagged
    /// rail net; plain `net` is a wildcard.
    pub rail: Option<NetTag>,
}

#[derive(Debug, Clone)]
pub struct Template {
    pub name: String,
    pub polarity: Polarity,
    pub priority: i32,
    pub devices: Vec<PatternDevice>,
    pub nets: Vec<PatternNet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub template: String,
    pub polarity: Polarity,
    pub priority: i32,
    /// pattern device id -> circuit device label
    pub device_binding: BTreeMap<String, String>,
    /// pattern net id -> circuit net label
    pub net_binding: BTreeMap<String, String>,
    /// Sorted member device labels; the canonical automorphism-dedup key.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortBinding {
    pub net: String,
    pub conducts: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Supernode {
    pub id: String,
    pub template: String,
    pub polarity: Polarity,
    pub members: Vec<String>,
    pub ports: BTreeMap<String, PortBinding>,
}

// ---------------------------------------------------------------------------
// Library loading

#[derive(Deserialize)]
struct RawNode {
    id: String,
    kind: String,
}

#[derive(Deserialize)]
struct RawEdge {
    device: String,
    net: String,
    label: String,
}

#[derive(Deserialize)]
struct RawPort {
    role: String,
    conducts: bool,
    #[serde(default)]
    internal: bool,
    #[serde(default)]
    not_rail: bool,
}

#[derive(Deserialize)]
struct RawTemplate {
    name: String,
    polarity: Polarity,
    priority: i32,
    nodes: Vec<RawNode>,
    edges: Vec<RawEdge>,
    port_roles: BTreeMap<String, RawPort>,
}

const BUILTIN_TEMPLATES: &str = include_str!("../data/templates.json");

/// The six built-in templates in priority order, with N and P polarity
/// variants where applicable.
pub fn builtin_library() -> Vec<Template> {
    parse_library(BUILTIN_TEMPLATES).expect("builtin template library is valid")
}

pub fn parse_library(json: &str) -> Result<Vec<Template>, MatchError> {
    let raw: Vec<RawTemplate> =
        serde_json::from_str(json).map_err(|e| MatchError::Library(e.to_string()))?;
    raw.into_iter().map(build_template).collect()
}

fn device_kind_from_code(code: &str) -> Option<DeviceKind> {
    match code {
        "nmos" => Some(DeviceKind::Nmos),
        "pmos" => Some(DeviceKind::Pmos),
        "r" => Some(DeviceKind::Resistor),
        "c" => Some(DeviceKind::Capacitor),
        "i" => Some(DeviceKind::CurrentSource),
        "v" => Some(DeviceKind::VoltageSource),
        _ => None,
    }
}

fn build_template(raw: RawTemplate) -> Result<Template, MatchError> {
    let mut nets: Vec<PatternNet> = Vec::new();
    let mut net_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut devices: Vec<PatternDevice> = Vec::new();
    let mut dev_index: BTreeMap<String, usize> = BTreeMap::new();

    for node in &raw.nodes {
        if matches!(node.kind.as_str(), "net" | "vdd" | "gnd") {
            let port = raw.port_roles.get(&node.id).ok_or_else(|| {
                MatchError::Library(format!(
                    "{}: net `{}` has no port role",
                    raw.name, node.id
                ))
            })?;
            let rail = match node.kind.as_str() {
                "vdd" => Some(NetTag::Vdd),
                "gnd" => Some(NetTag::Gnd),
                _ => None,
            };
            net_index.insert(node.id.clone(), nets.len());
            nets.push(PatternNet {
                id: node.id.clone(),
                port: PortSpec {
                    role: port.role.clone(),
                    conducts: port.conducts,
                    internal: port.internal,
                    not_rail: port.not_rail,
                },
                rail,
            });
        } else {
            let kind = device_kind_from_code(&node.kind).ok_or_else(|| {
                MatchError::Library(format!("{}: unknown node kind `{}`", raw.name, node.kind))
            })?;
            dev_index.insert(node.id.clone(), devices.len());
            devices.push(PatternDevice {
                id: node.id.clone(),
                kind,
                edges: Vec::new(),
            });
        }
    }

    for edge in &raw.edges {
        let dev = *dev_index.get(&edge.device).ok_or_else(|| {
            MatchError::Library(format!("{}: unknown device `{}`", raw.name, edge.device))
        })?;
        let net = *net_index.get(&edge.net).ok_or_else(|| {
            MatchError::Library(format!("{}: unknown net `{}`", raw.name, edge.net))
        })?;
        devices[dev].edges.push((edge.label.clone(), net));
    }

    for dev in &devices {
        if dev.kind.is_mos() {
            for code in ["G", "S", "D"] {
                if !dev.edges.iter().any(|(c, _)| c == code) {
                    return Err(MatchError::Library(format!(
                        "{}: device `{}` is missing a {code} edge",
                        raw.name, dev.id
                    )));
                }
            }
        }
    }

    // Connectivity check via union over shared nets.
    if devices.len() > 1 {
        let mut reached: BTreeSet<usize> = BTreeSet::new();
        let mut frontier = vec![0usize];
        while let Some(d) = frontier.pop() {
            if !reached.insert(d) {
                continue;
            }
            let nets_of: BTreeSet<usize> = devices[d].edges.iter().map(|(_, n)| *n).collect();
            for (other, dev) in devices.iter().enumerate() {
                if !reached.contains(&other)
                    && dev.edges.iter().any(|(_, n)| nets_of.contains(n))
                {
                    frontier.push(other);
                }
            }
        }
        if reached.len() != devices.len() {
            return Err(MatchError::Library(format!(
                "{}: pattern is not connected",
                raw.name
            )));
        }
    }

    // Search order: highest-degree pattern devices first.
    devices.sort_by(|a, b| b.edges.len().cmp(&a.edges.len()).then(a.id.cmp(&b.id)));

    Ok(Template {
        name: raw.name,
        polarity: raw.polarity,
        priority: raw.priority,
        devices,
        nets,
    })
}

// ---------------------------------------------------------------------------
// Matching

/// Terminal map of a device-side node: label code -> net node.
fn terminal_map(g: &CircuitGraph, dev: NodeId) -> BTreeMap<String, NodeId> {
    let mut out = BTreeMap::new();
    for edge in g.incident_edges(dev) {
        out.entry(edge.label.code()).or_insert(edge.net);
    }
    out
}

struct Search<'a> {
    graph: &'a CircuitGraph,
    template: &'a Template,
    candidates: Vec<Vec<NodeId>>,
    term_maps: BTreeMap<NodeId, BTreeMap<String, NodeId>>,
    dev_bind: Vec<Option<NodeId>>,
    net_bind: Vec<Option<NodeId>>,
    used_devices: BTreeSet<NodeId>,
    used_nets: BTreeSet<NodeId>,
    results: Vec<MatchResult>,
    seen: BTreeSet<Vec<String>>,
}

impl<'a> Search<'a> {
    fn run(mut self) -> Vec<MatchResult> {
        self.descend(0);
        self.results.sort_by(|a, b| a.members.cmp(&b.members));
        self.results
    }

    fn descend(&mut self, depth: usize) {
        if depth == self.template.devices.len() {
            self.emit();
            return;
        }
        let cands = self.candidates[depth].clone();
        for cand in cands {
            if self.used_devices.contains(&cand) {
                continue;
            }
            if let Some(newly_bound) = self.try_bind(depth, cand) {
                self.descend(depth + 1);
                self.unbind(depth, cand, &newly_bound);
            }
        }
    }

    /// Attempt to bind pattern device `depth` to circuit device `cand`;
    /// returns the pattern net indices newly bound on success.
    fn try_bind(&mut self, depth: usize, cand: NodeId) -> Option<Vec<usize>> {
        let pattern = &self.template.devices[depth];
        let terms = self.term_maps.get(&cand)?;
        let mut newly = Vec::new();
        for (code, pnet) in &pattern.edges {
            let Some(&cnet) = terms.get(code) else {
                self.rollback(&newly);
                return None;
            };
            match self.net_bind[*pnet] {
                Some(bound) if bound == cnet => {}
                Some(_) => {
                    self.rollback(&newly);
                    return None;
                }
                None => {
                    if self.used_nets.contains(&cnet) || !self.net_admissible(*pnet, cnet) {
                        self.rollback(&newly);
                        return None;
                    }
                    self.net_bind[*pnet] = Some(cnet);
                    self.used_nets.insert(cnet);
                    newly.push(*pnet);
                }
            }
        }
        self.dev_bind[depth] = Some(cand);
        self.used_devices.insert(cand);
        Some(newly)
    }

    fn net_admissible(&self, pnet: usize, cnet: NodeId) -> bool {
        let spec = &self.template.nets[pnet];
        let NodeKind::Net(tag) = self.graph.node(cnet).kind else {
            return false;
        };
        match spec.rail {
            Some(required) => tag == required,
            None => !(spec.port.not_rail && tag != NetTag::Plain),
        }
    }

    fn rollback(&mut self, newly: &[usize]) {
        for &pnet in newly {
            if let Some(net) = self.net_bind[pnet].take() {
                self.used_nets.remove(&net);
            }
        }
    }

    fn unbind(&mut self, depth: usize, cand: NodeId, newly: &[usize]) {
        self.dev_bind[depth] = None;
        self.used_devices.remove(&cand);
        self.rollback(newly);
    }

    fn emit(&mut self) {
        // Internal-net constraint: every connection of the bound net must go
        // to a matched member device.
        let members: BTreeSet<NodeId> = self.dev_bind.iter().flatten().copied().collect();
        for (idx, pnet) in self.template.nets.iter().enumerate() {
            if !pnet.port.internal {
                continue;
            }
            let Some(net) = self.net_bind[idx] else { continue };
            let fully_internal = self
                .graph
                .incident_edges(net)
                .all(|e| members.contains(&e.device));
            if !fully_internal {
                return;
            }
        }

        let mut member_labels: Vec<String> = members
            .iter()
            .map(|id| self.graph.node(*id).label.clone())
            .collect();
        member_labels.sort();
        if !self.seen.insert(member_labels.clone()) {
            return; // automorphic embedding of an already-reported match
        }
        let device_binding: BTreeMap<String, String> = self
            .template
            .devices
            .iter()
            .zip(&self.dev_bind)
            .map(|(p, b)| (p.id.clone(), self.graph.node(b.unwrap()).label.clone()))
            .collect();
        let net_binding: BTreeMap<String, String> = self
            .template
            .nets
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                self.net_bind[i].map(|n| (p.id.clone(), self.graph.node(n).label.clone()))
            })
            .collect();
        self.results.push(MatchResult {
            template: self.template.name.clone(),
            polarity: self.template.polarity,
            priority: self.template.priority,
            device_binding,
            net_binding,
            members: member_labels,
        });
    }
}

/// All label-preserving embeddings of `template` in `g`, deduplicated up to
/// template automorphism, in deterministic (member-name) order.
pub fn find_matches(g: &CircuitGraph, template: &Template) -> Vec<MatchResult> {
    let mut term_maps = BTreeMap::new();
    let mut by_kind: BTreeMap<DeviceKind, Vec<NodeId>> = BTreeMap::new();
    let mut kinded: Vec<(String, DeviceKind, NodeId)> = Vec::new();
    for node in g.device_side_nodes() {
        if let NodeKind::Device(kind) = node.kind {
            kinded.push((node.label.clone(), kind, node.id));
        }
    }
    kinded.sort();
    for (_, kind, id) in &kinded {
        by_kind.entry(*kind).or_default().push(*id);
        term_maps.insert(*id, terminal_map(g, *id));
    }

    let candidates: Vec<Vec<NodeId>> = template
        .devices
        .iter()
        .map(|p| by_kind.get(&p.kind).cloned().unwrap_or_default())
        .collect();

    Search {
        graph: g,
        template,
        candidates,
        term_maps,
        dev_bind: vec![None; template.devices.len()],
        net_bind: vec![None; template.nets.len()],
        used_devices: BTreeSet::new(),
        used_nets: BTreeSet::new(),
        results: Vec::new(),
        seen: BTreeSet::new(),
    }
    .run()
}

/// Re-check the template predicate on a reported match (soundness guard).
pub fn verify_match(g: &CircuitGraph, template: &Template, m: &MatchResult) -> bool {
    let mut bound_devs: BTreeSet<&str> = BTreeSet::new();
    for pd in &template.devices {
        let Some(dev_label) = m.device_binding.get(&pd.id) else {
            return false;
        };
        if !bound_devs.insert(dev_label) {
            return false;
        }
        let Some(dev) = g.node_by_label(dev_label) else {
            return false;
        };
        match &g.node(dev).kind {
            NodeKind::Device(k) if *k == pd.kind => {}
            _ => return false,
        }
        let terms = terminal_map(g, dev);
        for (code, pnet) in &pd.edges {
            let pnet_id = &template.nets[*pnet].id;
            let Some(expected) = m.net_binding.get(pnet_id) else {
                return false;
            };
            match terms.get(code) {
                Some(actual) if g.node(*actual).label == *expected => {}
                _ => return false,
            }
        }
    }
    for (a, pa) in template.nets.iter().enumerate() {
        for pb in template.nets.iter().skip(a + 1) {
            if m.net_binding.get(&pa.id) == m.net_binding.get(&pb.id) {
                return false; // injectivity violated
            }
        }
    }
    true
}

/// Greedy selection by (priority desc, member count desc, member names asc)
/// such that selected matches are device-disjoint.
pub fn resolve_overlaps(matches: &[MatchResult]) -> Vec<MatchResult> {
    let mut sorted: Vec<&MatchResult> = matches.iter().collect();
    sorted.sort_by(|a, b| {
        b.priority
            .cmp(&a.priority)
            .then(b.members.len().cmp(&a.members.len()))
            .then(a.members.cmp(&b.members))
            .then(a.template.cmp(&b.template))
    });
    let mut used: BTreeSet<&str> = BTreeSet::new();
    let mut kept = Vec::new();
    for m in sorted {
        if m.members.iter().any(|d| used.contains(d.as_str())) {
            continue;
        }
        used.extend(m.members.iter().map(|s| s.as_str()));
        kept.push(m.clone());
    }
    kept.sort_by(|a, b| a.members.cmp(&b.members));
    kept
}

fn snake_case(name: &str) -> String {
    let mut out = String::new();
    let mut prev_lower = false;
    for c in name.chars() {
        if c.is_ascii_uppercase() {
            if prev_lower {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
            prev_lower = false;
        } else {
            out.push(c);
            prev_lower = true;
        }
    }
    out
}

/// Replace each match's devices by one supernode. Boundary edges are merged
/// per bound net and re-labeled with the template's port roles; member bulk
/// edges to unbound nets become non-conducting `bulk` ports. Nets whose
/// every remaining connection lands on a single supernode are marked
/// internal but retained.
pub fn collapse(
    g: &CircuitGraph,
    templates: &[Template],
    matches: &[MatchResult],
    id_offset: usize,
) -> Result<(CircuitGraph, Vec<Supernode>), MatchError> {
    let mut claimed: BTreeSet<&str> = BTreeSet::new();
    for m in matches {
        for dev in &m.members {
            if !claimed.insert(dev) {
                return Err(MatchError::OverlappingMatches(dev.clone()));
            }
        }
    }

    let mut ordered: Vec<&MatchResult> = matches.iter().collect();
    ordered.sort_by(|a, b| a.members.cmp(&b.members));

    let mut out = CircuitGraph {
        title: g.title().to_string(),
        nodes: Vec::new(),
        edges: Vec::new(),
        adjacency: Vec::new(),
        by_label: BTreeMap::new(),
        gnd: None,
        vdd: None,
    };

    // Net nodes first, preserving order and tags.
    let mut net_map: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for node in g.net_nodes() {
        let id = out.push_node(node.label.clone(), node.kind.clone(), IndexMap::new());
        net_map.insert(node.id, id);
    }
    out.gnd = g.gnd().and_then(|id| net_map.get(&id).copied());
    out.vdd = g.vdd().and_then(|id| net_map.get(&id).copied());

    // Unmatched device-side nodes keep their edges verbatim.
    for node in g.device_side_nodes() {
        if claimed.contains(node.label.as_str()) {
            continue;
        }
        let id = out.push_node(node.label.clone(), node.kind.clone(), node.params.clone());
        for edge in g.incident_edges(node.id) {
            out.push_edge(Edge {
                device: id,
                net: net_map[&edge.net],
                label: edge.label.clone(),
                term: edge.term,
            });
        }
    }

    // One supernode per match.
    let mut supernodes = Vec::new();
    for (idx, m) in ordered.iter().enumerate() {
        let template = templates
            .iter()
            .find(|t| t.name == m.template && t.polarity == m.polarity)
            .ok_or_else(|| MatchError::Library(format!("unknown template `{}`", m.template)))?;
        let sn_label = format!("sn{}_{}", id_offset + idx + 1, snake_case(&m.template));
        let sn_id = out.push_node(
            sn_label.clone(),
            NodeKind::Supernode {
                template: m.template.clone(),
            },
            IndexMap::new(),
        );

        let mut ports: BTreeMap<String, PortBinding> = BTreeMap::new();
        for pnet in &template.nets {
            let Some(net_label) = m.net_binding.get(&pnet.id) else {
                continue;
            };
            let old_net = g
                .node_by_label(net_label)
                .ok_or_else(|| MatchError::Library(format!("missing net `{net_label}`")))?;
            out.push_edge(Edge {
                device: sn_id,
                net: net_map[&old_net],
                label: EdgeLabel::Port {
                    role: pnet.port.role.clone(),
                    conducts: pnet.port.conducts,
                },
                term: None,
            });
            ports.insert(
                pnet.port.role.clone(),
                PortBinding {
                    net: net_label.clone(),
                    conducts: pnet.port.conducts,
                },
            );
        }

        // Member bulk edges to nets outside the binding.
        let bound_nets: BTreeSet<&String> = m.net_binding.values().collect();
        let mut bulk_nets: BTreeSet<NodeId> = BTreeSet::new();
        for member in &m.members {
            let dev = g.node_by_label(member).expect("member exists");
            for edge in g.incident_edges(dev) {
                let net_label = &g.node(edge.net).label;
                if bound_nets.contains(net_label) {
                    continue;
                }
                debug_assert_eq!(edge.term, Some(TerminalRole::Bulk));
                bulk_nets.insert(edge.net);
            }
        }
        for net in bulk_nets {
            out.push_edge(Edge {
                device: sn_id,
                net: net_map[&net],
                label: EdgeLabel::Port {
                    role: "bulk".into(),
                    conducts: false,
                },
                term: None,
            });
        }

        supernodes.push(Supernode {
            id: sn_label,
            template: m.template.clone(),
            polarity: m.polarity,
            members: m.members.clone(),
            ports,
        });
    }

    // Internal marking: net fully absorbed by one supernode.
    for idx in 0..out.nodes.len() {
        let node = &out.nodes[idx];
        if !matches!(node.kind, NodeKind::Net(_)) {
            continue;
        }
        let device_ids: BTreeSet<NodeId> = out
            .incident_edges(node.id)
            .map(|e| e.device)
            .collect();
        let absorbed = device_ids.len() == 1
            && device_ids.iter().all(|id| {
                matches!(out.node(*id).kind, NodeKind::Supernode { .. })
            })
            && out.incident_edges(node.id).next().is_some();
        if absorbed {
            out.nodes[idx].internal = true;
        }
    }

    out.check_bipartite()?;
    Ok((out, supernodes))
}

/// Match all templates, resolve overlaps, and collapse, repeating until no
/// further matches are found. Terminates because each collapsing round
/// strictly decreases the device count.
pub fn match_and_collapse(
    g: &CircuitGraph,
    templates: &[Template],
) -> Result<(CircuitGraph, Vec<Supernode>), MatchError> {
    let mut current = g.clone();
    let mut all_supernodes: Vec<Supernode> = Vec::new();
    loop {
        let mut matches = Vec::new();
        for t in templates {
            matches.extend(find_matches(&current, t));
        }
        let kept = resolve_overlaps(&matches);
        if kept.is_empty() {
            return Ok((current, all_supernodes));
        }
        let (next, supernodes) = collapse(&current, templates, &kept, all_supernodes.len())?;
        current = next;
        all_supernodes.extend(supernodes);
    }
}
