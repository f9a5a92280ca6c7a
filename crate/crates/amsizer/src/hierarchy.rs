//! The three-level annotation container: components (devices), modules
//! (collapsed supernodes), and stages, plus the stage interconnection edges
//! and the unstaged bucket. Serialized as versioned JSON, this file is the
//! contract between topology analysis and the understanding engine.

use crate::graph::CircuitGraph;
use crate::netlist::{Netlist, ParamValue};
use crate::stages::{ConductionGraph, Stage, StageGraph};
use crate::templates::{Polarity, Supernode};
use crate::understand::Annotation;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const HIERARCHY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("hierarchy validation failed: {0}")]
    Invalid(String),
    #[error("hierarchy JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IoNets {
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Rails {
    pub gnd: Option<String>,
    pub vdd: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentEntry {
    pub name: String,
    pub kind: String,
    /// Terminal role letter -> net name.
    pub terminals: BTreeMap<String, String>,
    pub params: BTreeMap<String, ParamValue>,
    /// Owning supernode, when collapsed into one.
    pub module: Option<String>,
    /// Owning stage (directly, or through the owning module).
    pub stage: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortEntry {
    pub net: String,
    pub conducts: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModuleEntry {
    pub id: String,
    pub template: String,
    pub polarity: Polarity,
    pub members: Vec<String>,
    pub ports: BTreeMap<String, PortEntry>,
    pub stage: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageEntry {
    pub id: String,
    /// Sorted labels of devices, supernodes, and internal nets.
    pub members: Vec<String>,
    pub contains_primary_input: bool,
    pub contains_primary_output: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageEdgeEntry {
    pub a: String,
    pub b: String,
    pub nets: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hierarchy {
    pub version: u32,
    pub title: String,
    pub rails: Rails,
    pub io: IoNets,
    pub components: Vec<ComponentEntry>,
    pub modules: Vec<ModuleEntry>,
    pub stages: Vec<StageEntry>,
    pub stage_edges: Vec<StageEdgeEntry>,
    pub unstaged: Vec<String>,
    /// Canonical text rendering of the collapsed graph for advisor prompts.
    pub circuit_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Annotation>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
pub fn build_hierarchy(
    netlist: &Netlist,
    collapsed: &CircuitGraph,
    supernodes: &[Supernode],
    stages: &[Stage],
    cg: Option<&ConductionGraph>,
    stage_graph: &StageGraph,
    unstaged: &[String],
    io: &IoNets,
    warnings: Vec<String>,
) -> Hierarchy {
    // label -> stage id over conduction-node labels
    let mut stage_of: BTreeMap<String, String> = BTreeMap::new();
    let mut stage_entries = Vec::new();
    for stage in stages {
        let mut members: Vec<String> = Vec::new();
        if let Some(cg) = cg {
            for &local in &stage.members {
                let label = cg.label(local).to_string();
                stage_of.insert(label.clone(), stage.id.clone());
                members.push(label);
            }
        }
        members.sort();
        stage_entries.push(StageEntry {
            id: stage.id.clone(),
            members,
            contains_primary_input: stage.contains_primary_input,
            contains_primary_output: stage.contains_primary_output,
        });
    }

    let mut module_of: BTreeMap<&str, &str> = BTreeMap::new();
    for sn in supernodes {
        for member in &sn.members {
            module_of.insert(member, &sn.id);
        }
    }

    let components = netlist
        .devices
        .iter()
        .map(|dev| {
            let module = module_of.get(dev.name.as_str()).map(|s| s.to_string());
            let stage = stage_of
                .get(&dev.name)
                .cloned()
                .or_else(|| module.as_ref().and_then(|m| stage_of.get(m).cloned()));
            ComponentEntry {
                name: dev.name.clone(),
                kind: crate::graph::NodeKind::Device(dev.kind).code(),
                terminals: dev
                    .terminals
                    .iter()
                    .map(|(role, net)| (role.letter().to_string(), net.clone()))
                    .collect(),
                params: dev
                    .params
                    .iter()
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect(),
                module,
                stage,
            }
        })
        .collect();

    let modules = supernodes
        .iter()
        .map(|sn| ModuleEntry {
            id: sn.id.clone(),
            template: sn.template.clone(),
            polarity: sn.polarity,
            members: sn.members.clone(),
            ports: sn
                .ports
                .iter()
                .map(|(role, binding)| {
                    (
                        role.clone(),
                        PortEntry {
                            net: binding.net.clone(),
                            conducts: binding.conducts,
                        },
                    )
                })
                .collect(),
            stage: stage_of.get(&sn.id).cloned(),
        })
        .collect();

    Hierarchy {
        version: HIERARCHY_VERSION,
        title: netlist.title.clone(),
        rails: Rails {
            gnd: netlist.gnd.clone(),
            vdd: netlist.vdd.clone(),
        },
        io: io.clone(),
        components,
        modules,
        stages: stage_entries,
        stage_edges: stage_graph
            .edges
            .iter()
            .map(|e| StageEdgeEntry {
                a: e.a.clone(),
                b: e.b.clone(),
                nets: e.nets.clone(),
            })
            .collect(),
        unstaged: unstaged.to_vec(),
        circuit_text: collapsed.to_text(),
        annotations: None,
        warnings,
    }
}

impl Hierarchy {
    pub fn from_json(json: &str) -> Result<Hierarchy, HierarchyError> {
        let h: Hierarchy = serde_json::from_str(json)?;
        h.validate()?;
        Ok(h)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("hierarchy serializes")
    }

    pub fn component(&self, name: &str) -> Option<&ComponentEntry> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn module(&self, id: &str) -> Option<&ModuleEntry> {
        self.modules.iter().find(|m| m.id == id)
    }

    pub fn stage(&self, id: &str) -> Option<&StageEntry> {
        self.stages.iter().find(|s| s.id == id)
    }

    /// All item identifiers the understanding loop must cover.
    pub fn item_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        out.extend(self.components.iter().map(|c| format!("device:{}", c.name)));
        out.extend(self.modules.iter().map(|m| format!("module:{}", m.id)));
        out.extend(self.stages.iter().map(|s| format!("stage:{}", s.id)));
        out
    }

    /// Design-variable symbols referenced by component parameters.
    pub fn symbols(&self) -> Vec<String> {
        let mut out: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
        for c in &self.components {
            for v in c.params.values() {
                if let ParamValue::Symbol(s) = v {
                    out.insert(s.clone());
                }
            }
        }
        out.into_iter().collect()
    }

    pub fn validate(&self) -> Result<(), HierarchyError> {
        if self.version != HIERARCHY_VERSION {
            return Err(HierarchyError::Invalid(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.components {
            if !names.insert(&c.name) {
                return Err(HierarchyError::Invalid(format!(
                    "duplicate component `{}`",
                    c.name
                )));
            }
        }
        for m in &self.modules {
            for member in &m.members {
                if self.component(member).is_none() {
                    return Err(HierarchyError::Invalid(format!(
                        "module `{}` references unknown component `{member}`",
                        m.id
                    )));
                }
            }
        }
        for e in &self.stage_edges {
            if self.stage(&e.a).is_none() || self.stage(&e.b).is_none() {
                return Err(HierarchyError::Invalid(format!(
                    "stage edge {} -- {} references unknown stage",
                    e.a, e.b
                )));
            }
        }
        Ok(())
    }

    /// Designer-readable rendering: stages with their members and functions,
    /// module ports, then the per-device lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "Hierarchy of \"{}\": {} components, {} modules, {} stages.\n",
            self.title,
            self.components.len(),
            self.modules.len(),
            self.stages.len()
        ));
        for stage in &self.stages {
            let mut flags = Vec::new();
            if stage.contains_primary_input {
                flags.push("primary input");
            }
            if stage.contains_primary_output {
                flags.push("primary output");
            }
            let flags = if flags.is_empty() {
                String::new()
            } else {
                format!(" [{}]", flags.join(", "))
            };
            out.push_str(&format!(
                "{}{}: members {}\n",
                stage.id,
                flags,
                stage.members.join(", ")
            ));
            if let Some(ann) = &self.annotations {
                if let Some(j) = ann.stage_functions.get(&stage.id) {
                    out.push_str(&format!("  function: {}\n", j.role));
                }
            }
        }
        for edge in &self.stage_edges {
            out.push_str(&format!(
                "{} couples to {} through nets {}\n",
                edge.a,
                edge.b,
                edge.nets.join(", ")
            ));
        }
        if !self.unstaged.is_empty() {
            out.push_str(&format!("unstaged: {}\n", self.unstaged.join(", ")));
        }
        for module in &self.modules {
            let ports: Vec<String> = module
                .ports
                .iter()
                .map(|(role, p)| format!("{role}={}", p.net))
                .collect();
            out.push_str(&format!(
                "{} is a {} ({:?} flavor) over {{{}}} with ports {}\n",
                module.id,
                module.template,
                module.polarity,
                module.members.join(", "),
                ports.join(", ")
            ));
            if let Some(ann) = &self.annotations {
                if let Some(j) = ann.module_functions.get(&module.id) {
                    out.push_str(&format!("  function: {}\n", j.role));
                }
            }
        }
        out.push('\n');
        out.push_str(&self.circuit_text);
        out
    }
}
