//! Circuit analysis and sizing toolkit: parse a flat SPICE-subset netlist,
//! lift it into a typed bipartite graph, recognize analog building blocks by
//! labeled subgraph matching, group the result into conduction-path stages,
//! run an advisor-backed understanding loop over the hierarchy, and drive
//! trust-region Bayesian optimization of device sizing against pluggable
//! evaluators.
//!
//! The data-parallel inner loops (batch evaluation, acquisition scoring) use
//! rayon behind the default `parallel` feature; disabling it falls back to
//! sequential implementations with identical results.

pub mod advisor;
pub mod eval;
pub mod gp;
pub mod graph;
pub mod hierarchy;
pub mod netlist;
pub mod opt;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod sample;
pub mod score;
pub mod space;
pub mod stages;
pub mod templates;
pub mod understand;

pub use graph::{build_graph, CircuitGraph, EdgeLabel, NodeId, NodeKind};
pub use netlist::{parse_netlist, resolve_rails, serialize_netlist, Netlist, NetlistError};
