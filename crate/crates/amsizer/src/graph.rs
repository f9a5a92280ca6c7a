//! Typed bipartite circuit graph: device-side nodes (devices, collapsed
//! supernodes) on one side, net nodes on the other, edges labeled with
//! terminal roles or device types.
//!
//! The graph is lossless with respect to the netlist: bulk terminals are
//! carried on an auxiliary `B` label outside the core label set, and
//! two-terminal devices keep their P/N orientation in edge metadata, so
//! `reconstruct_netlist` returns a netlist equal to the input. All orderings
//! are deterministic (lexicographic by original name) so downstream matching,
//! grouping, and prompt text are reproducible run to run.

use crate::netlist::{Device, DeviceKind, Netlist, ParamValue, TerminalRole};
use indexmap::IndexMap;
use serde_json::json;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("graph contains supernodes; reconstruction needs an uncollapsed graph")]
    ContainsSupernodes,
    #[error("graph is not bipartite: {0}")]
    NotBipartite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetTag {
    Plain,
    Gnd,
    Vdd,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Device(DeviceKind),
    Supernode { template: String },
    Net(NetTag),
}

impl NodeKind {
    pub fn is_device_side(&self) -> bool {
        !matches!(self, NodeKind::Net(_))
    }

    pub fn code(&self) -> String {
        match self {
            NodeKind::Device(DeviceKind::Nmos) => "nmos".into(),
            NodeKind::Device(DeviceKind::Pmos) => "pmos".into(),
            NodeKind::Device(DeviceKind::Resistor) => "r".into(),
            NodeKind::Device(DeviceKind::Capacitor) => "c".into(),
            NodeKind::Device(DeviceKind::CurrentSource) => "i".into(),
            NodeKind::Device(DeviceKind::VoltageSource) => "v".into(),
            NodeKind::Supernode { template } => format!("supernode:{template}"),
            NodeKind::Net(NetTag::Plain) => "net".into(),
            NodeKind::Net(NetTag::Gnd) => "gnd".into(),
            NodeKind::Net(NetTag::Vdd) => "vdd".into(),
        }
    }
}

/// Edge labels: the core label set {G,S,D,R,C,I,V}, the auxiliary bulk
/// label B, and port labels on collapsed supernode boundaries.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeLabel {
    Terminal(TerminalRole),
    DeviceType(DeviceKind),
    Port { role: String, conducts: bool },
}

impl EdgeLabel {
    /// Label code as used in JSON exports and template files.
    pub fn code(&self) -> String {
        match self {
            EdgeLabel::Terminal(role) => role.letter().to_string(),
            EdgeLabel::DeviceType(DeviceKind::Resistor) => "R".into(),
            EdgeLabel::DeviceType(DeviceKind::Capacitor) => "C".into(),
            EdgeLabel::DeviceType(DeviceKind::CurrentSource) => "I".into(),
            EdgeLabel::DeviceType(DeviceKind::VoltageSource) => "V".into(),
            EdgeLabel::DeviceType(k) => k.letter().to_string(),
            EdgeLabel::Port { role, .. } => role.clone(),
        }
    }

    /// Whether DC current can flow across this edge. Capacitor edges, MOS
    /// gate edges, and the auxiliary bulk edges do not conduct.
    pub fn conducts(&self) -> bool {
        match self {
            EdgeLabel::Terminal(TerminalRole::Gate) | EdgeLabel::Terminal(TerminalRole::Bulk) => {
                false
            }
            EdgeLabel::Terminal(_) => true,
            EdgeLabel::DeviceType(DeviceKind::Capacitor) => false,
            EdgeLabel::DeviceType(_) => true,
            EdgeLabel::Port { conducts, .. } => *conducts,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub device: NodeId,
    pub net: NodeId,
    pub label: EdgeLabel,
    /// Terminal role for device edges; `None` for supernode port edges.
    pub term: Option<TerminalRole>,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub label: String,
    pub kind: NodeKind,
    /// Set on net nodes whose every connection was absorbed by one supernode.
    pub internal: bool,
    /// Device parameters (empty for nets and supernodes).
    pub params: IndexMap<String, ParamValue>,
}

#[derive(Debug, Clone)]
pub struct CircuitGraph {
    pub(crate) title: String,
    pub(crate) nodes: Vec<Node>,
    pub(crate) edges: Vec<Edge>,
    pub(crate) adjacency: Vec<Vec<usize>>,
    pub(crate) by_label: BTreeMap<String, NodeId>,
    pub(crate) gnd: Option<NodeId>,
    pub(crate) vdd: Option<NodeId>,
}

/// Build the bipartite graph from a rail-resolved netlist. One device node
/// per device, one net node per net; MOS bulk edges carried with the
/// auxiliary `B` label.
pub fn build_graph(netlist: &Netlist) -> Result<CircuitGraph, GraphError> {
    let mut graph = CircuitGraph {
        title: netlist.title.clone(),
        nodes: Vec::new(),
        edges: Vec::new(),
        adjacency: Vec::new(),
        by_label: BTreeMap::new(),
        gnd: None,
        vdd: None,
    };

    for net in &netlist.nets {
        let tag = if Some(net) == netlist.gnd.as_ref() {
            NetTag::Gnd
        } else if Some(net) == netlist.vdd.as_ref() {
            NetTag::Vdd
        } else {
            NetTag::Plain
        };
        let id = graph.push_node(net.clone(), NodeKind::Net(tag), IndexMap::new());
        match tag {
            NetTag::Gnd => graph.gnd = Some(id),
            NetTag::Vdd => graph.vdd = Some(id),
            NetTag::Plain => {}
        }
    }

    for dev in &netlist.devices {
        let dev_id = graph.push_node(
            dev.name.clone(),
            NodeKind::Device(dev.kind),
            dev.params.clone(),
        );
        for (role, net) in &dev.terminals {
            let net_id = graph
                .net_id(net)
                .ok_or_else(|| GraphError::UnknownNode(net.clone()))?;
            let label = match dev.kind {
                DeviceKind::Nmos | DeviceKind::Pmos => EdgeLabel::Terminal(*role),
                kind => EdgeLabel::DeviceType(kind),
            };
            graph.push_edge(Edge {
                device: dev_id,
                net: net_id,
                label,
                term: Some(*role),
            });
        }
    }

    graph.check_bipartite()?;
    Ok(graph)
}

impl CircuitGraph {
    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn gnd(&self) -> Option<NodeId> {
        self.gnd
    }

    pub fn vdd(&self) -> Option<NodeId> {
        self.vdd
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn node_by_label(&self, label: &str) -> Option<NodeId> {
        self.by_label.get(label).copied()
    }

    pub fn device_side_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind.is_device_side())
    }

    pub fn net_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Net(_)))
    }

    pub fn incident_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> {
        self.adjacency[id.index()].iter().map(|&i| &self.edges[i])
    }

    pub(crate) fn push_node(
        &mut self,
        label: String,
        kind: NodeKind,
        params: IndexMap<String, ParamValue>,
    ) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.by_label.entry(label.clone()).or_insert(id);
        self.nodes.push(Node {
            id,
            label,
            kind,
            internal: false,
            params,
        });
        self.adjacency.push(Vec::new());
        id
    }

    pub(crate) fn push_edge(&mut self, edge: Edge) {
        let idx = self.edges.len();
        self.adjacency[edge.device.index()].push(idx);
        self.adjacency[edge.net.index()].push(idx);
        self.edges.push(edge);
    }

    fn net_id(&self, label: &str) -> Option<NodeId> {
        self.by_label
            .get(label)
            .copied()
            .filter(|id| matches!(self.node(*id).kind, NodeKind::Net(_)))
    }

    pub(crate) fn check_bipartite(&self) -> Result<(), GraphError> {
        for edge in &self.edges {
            let dev = self.node(edge.device);
            let net = self.node(edge.net);
            if !dev.kind.is_device_side() || !matches!(net.kind, NodeKind::Net(_)) {
                return Err(GraphError::NotBipartite(format!(
                    "edge {} -- {} does not join a device-side node to a net",
                    dev.label, net.label
                )));
            }
        }
        Ok(())
    }

    /// Neighbors of `v` with edge labels, optionally filtered to a set of
    /// label codes. Output is sorted by (neighbor label, label code) so
    /// downstream algorithms are reproducible.
    pub fn neighbors(
        &self,
        v: NodeId,
        label_filter: Option<&[&str]>,
    ) -> Result<Vec<(NodeId, &EdgeLabel)>, GraphError> {
        if v.index() >= self.nodes.len() {
            return Err(GraphError::UnknownNode(format!("#{}", v.0)));
        }
        let mut out: Vec<(NodeId, &EdgeLabel)> = self
            .incident_edges(v)
            .filter(|e| match label_filter {
                Some(codes) => codes.iter().any(|c| *c == e.label.code()),
                None => true,
            })
            .map(|e| {
                let other = if e.device == v { e.net } else { e.device };
                (other, &e.label)
            })
            .collect();
        out.sort_by(|a, b| {
            self.node(a.0)
                .label
                .cmp(&self.node(b.0).label)
                .then_with(|| a.1.code().cmp(&b.1.code()))
        });
        Ok(out)
    }

    /// Canonical natural-language rendering, one line per device-side node,
    /// intended for advisor prompts. Deterministic: sorted by node label.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let rails = format!(
            "rails: VDD={}, GND={}",
            self.vdd.map(|id| self.node(id).label.as_str()).unwrap_or("<none>"),
            self.gnd.map(|id| self.node(id).label.as_str()).unwrap_or("<none>"),
        );
        out.push_str(&format!(
            "Circuit \"{}\": {} device-side nodes, {} nets; {}.\n",
            self.title,
            self.device_side_nodes().count(),
            self.net_nodes().count(),
            rails
        ));
        let mut devs: Vec<&Node> = self.device_side_nodes().collect();
        devs.sort_by(|a, b| a.label.cmp(&b.label));
        for node in devs {
            out.push_str(&self.describe_node(node));
            out.push('\n');
        }
        out
    }

    fn describe_node(&self, node: &Node) -> String {
        let mut terms: Vec<String> = self
            .neighbors(node.id, None)
            .unwrap_or_default()
            .into_iter()
            .map(|(net, label)| {
                let net = &self.node(net).label;
                match label {
                    EdgeLabel::Terminal(role) => format!("{} on net {net}", role.describe()),
                    EdgeLabel::DeviceType(_) => format!("terminal on net {net}"),
                    EdgeLabel::Port { role, .. } => format!("{role} on net {net}"),
                }
            })
            .collect();
        terms.sort();
        let params = if node.params.is_empty() {
            String::new()
        } else {
            let kv: Vec<String> = node
                .params
                .iter()
                .map(|(k, v)| match v {
                    ParamValue::Literal(x) => format!("{k}={x}"),
                    ParamValue::Symbol(s) => format!("{k}={s}"),
                })
                .collect();
            format!(" ({})", kv.join(", "))
        };
        match &node.kind {
            NodeKind::Device(kind) => {
                let article = if *kind == DeviceKind::Nmos { "an" } else { "a" };
                format!(
                    "{} is {article} {} with {}{params}.",
                    node.label,
                    kind.describe(),
                    terms.join(", ")
                )
            }
            NodeKind::Supernode { template } => format!(
                "{} is a {template} supernode with {}.",
                node.label,
                terms.join(", ")
            ),
            NodeKind::Net(_) => String::new(),
        }
    }

    /// Versioned JSON export consumed by the hierarchy container, template
    /// files, and test fixtures.
    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<_> = self
            .nodes
            .iter()
            .map(|n| {
                json!({
                    "id": n.label,
                    "kind": n.kind.code(),
                    "label": n.label,
                    "internal": n.internal,
                })
            })
            .collect();
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| {
                let mut obj = json!({
                    "device": self.node(e.device).label,
                    "net": self.node(e.net).label,
                    "label": e.label.code(),
                    "conducts": e.label.conducts(),
                });
                if let Some(term) = e.term {
                    obj["role"] = json!(term.letter());
                }
                obj
            })
            .collect();
        json!({
            "version": 1,
            "nodes": nodes,
            "edges": edges,
            "rails": {
                "gnd": self.gnd.map(|id| self.node(id).label.clone()),
                "vdd": self.vdd.map(|id| self.node(id).label.clone()),
            },
        })
    }

    /// Rebuild the netlist from graph structure; errors if the graph was
    /// collapsed (supernodes have no device-level payload).
    pub fn reconstruct_netlist(&self) -> Result<Netlist, GraphError> {
        let mut devices = Vec::new();
        for node in &self.nodes {
            match &node.kind {
                NodeKind::Net(_) => continue,
                NodeKind::Supernode { .. } => return Err(GraphError::ContainsSupernodes),
                NodeKind::Device(kind) => {
                    let mut terms: Vec<(TerminalRole, String)> = self
                        .incident_edges(node.id)
                        .filter_map(|e| Some((e.term?, self.node(e.net).label.clone())))
                        .collect();
                    terms.sort_by_key(|(role, _)| *role);
                    devices.push(Device {
                        name: node.label.clone(),
                        kind: *kind,
                        terminals: terms,
                        params: node.params.clone(),
                    });
                }
            }
        }
        let nets: Vec<String> = self.net_nodes().map(|n| n.label.clone()).collect();
        Ok(Netlist {
            title: self.title.clone(),
            devices,
            nets,
            gnd: self.gnd.map(|id| self.node(id).label.clone()),
            vdd: self.vdd.map(|id| self.node(id).label.clone()),
            warnings: Vec::new(),
        })
    }
}
