//! Shared test utilities: independent oracles (exhaustive subgraph
//! matching, naive path enumeration, pairwise transitive-closure stage
//! partition) and deterministic random generators for netlists, conduction
//! graphs, and golden template-instance netlists. The oracles intentionally
//! re-derive everything from first principles rather than reusing the
//! library's search code.

#![allow(dead_code)]

use amsizer::graph::{CircuitGraph, NodeKind};
use amsizer::netlist::DeviceKind;
use amsizer::templates::Template;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use std::collections::{BTreeMap, BTreeSet};

// ---------------------------------------------------------------------------
// Exhaustive template-matching oracle

/// Terminal map of a device: edge label code -> net label.
fn terminals(g: &CircuitGraph, label: &str) -> BTreeMap<String, String> {
    let id = g.node_by_label(label).expect("device exists");
    let mut out = BTreeMap::new();
    for edge in g.incident_edges(id) {
        out.entry(edge.label.code())
            .or_insert_with(|| g.node(edge.net).label.clone());
    }
    out
}

fn net_tag(g: &CircuitGraph, label: &str) -> Option<&'static str> {
    let id = g.node_by_label(label)?;
    match g.node(id).kind {
        NodeKind::Net(amsizer::graph::NetTag::Gnd) => Some("gnd"),
        NodeKind::Net(amsizer::graph::NetTag::Vdd) => Some("vdd"),
        NodeKind::Net(amsizer::graph::NetTag::Plain) => Some("net"),
        _ => None,
    }
}

/// All embeddings of `template` found by brute force: every ordered
/// assignment of distinct circuit devices to pattern devices, with the net
/// binding derived from terminal maps and every constraint re-checked.
/// Returns canonical sorted member-name sets.
pub fn oracle_matches(g: &CircuitGraph, template: &Template) -> BTreeSet<Vec<String>> {
    let devices: Vec<(String, DeviceKind)> = g
        .device_side_nodes()
        .filter_map(|n| match n.kind {
            NodeKind::Device(kind) => Some((n.label.clone(), kind)),
            _ => None,
        })
        .collect();
    let k = template.devices.len();
    let mut found = BTreeSet::new();
    let mut assignment: Vec<usize> = Vec::with_capacity(k);
    enumerate_assignments(g, template, &devices, &mut assignment, &mut found);
    found
}

fn enumerate_assignments(
    g: &CircuitGraph,
    template: &Template,
    devices: &[(String, DeviceKind)],
    assignment: &mut Vec<usize>,
    found: &mut BTreeSet<Vec<String>>,
) {
    if assignment.len() == template.devices.len() {
        if check_assignment(g, template, devices, assignment) {
            let mut members: Vec<String> = assignment
                .iter()
                .map(|&i| devices[i].0.clone())
                .collect();
            members.sort();
            found.insert(members);
        }
        return;
    }
    let depth = assignment.len();
    for (i, (_, kind)) in devices.iter().enumerate() {
        if *kind != template.devices[depth].kind || assignment.contains(&i) {
            continue;
        }
        assignment.push(i);
        enumerate_assignments(g, template, devices, assignment, found);
        assignment.pop();
    }
}

fn check_assignment(
    g: &CircuitGraph,
    template: &Template,
    devices: &[(String, DeviceKind)],
    assignment: &[usize],
) -> bool {
    // Derive the net binding from the terminal maps.
    let mut binding: BTreeMap<String, String> = BTreeMap::new();
    for (pd, &dev_idx) in template.devices.iter().zip(assignment) {
        let terms = terminals(g, &devices[dev_idx].0);
        for (code, pnet_idx) in &pd.edges {
            let Some(net) = terms.get(code) else {
                return false;
            };
            let pnet = &template.nets[*pnet_idx].id;
            match binding.get(pnet) {
                Some(bound) if bound != net => return false,
                Some(_) => {}
                None => {
                    binding.insert(pnet.clone(), net.clone());
                }
            }
        }
    }
    // Injectivity of the net binding.
    let distinct: BTreeSet<&String> = binding.values().collect();
    if distinct.len() != binding.len() {
        return false;
    }
    // Rail and not-rail requirements.
    for pnet in &template.nets {
        let Some(net) = binding.get(&pnet.id) else {
            continue;
        };
        let tag = net_tag(g, net).unwrap_or("?");
        match pnet.rail {
            Some(amsizer::graph::NetTag::Vdd) if tag != "vdd" => return false,
            Some(amsizer::graph::NetTag::Gnd) if tag != "gnd" => return false,
            _ => {}
        }
        if pnet.rail.is_none() && pnet.port.not_rail && tag != "net" {
            return false;
        }
    }
    // Internal nets connect only to matched members.
    let members: BTreeSet<&str> = assignment
        .iter()
        .map(|&i| devices[i].0.as_str())
        .collect();
    for pnet in &template.nets {
        if !pnet.port.internal {
            continue;
        }
        let Some(net) = binding.get(&pnet.id) else {
            continue;
        };
        let net_id = g.node_by_label(net).expect("net exists");
        for edge in g.incident_edges(net_id) {
            if !members.contains(g.node(edge.device).label.as_str()) {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Naive conduction-path and stage-partition oracles

/// All simple vdd-to-gnd paths by plain recursion over adjacency lists.
pub fn naive_paths(adj: &[Vec<usize>], vdd: usize, gnd: usize) -> BTreeSet<Vec<usize>> {
    let mut out = BTreeSet::new();
    let mut visited = vec![false; adj.len()];
    let mut path = vec![vdd];
    visited[vdd] = true;
    naive_dfs(adj, gnd, &mut visited, &mut path, &mut out);
    out
}

fn naive_dfs(
    adj: &[Vec<usize>],
    gnd: usize,
    visited: &mut Vec<bool>,
    path: &mut Vec<usize>,
    out: &mut BTreeSet<Vec<usize>>,
) {
    let here = *path.last().unwrap();
    if here == gnd {
        out.insert(path.clone());
        return;
    }
    for &next in &adj[here] {
        if !visited[next] {
            visited[next] = true;
            path.push(next);
            naive_dfs(adj, gnd, visited, path, out);
            path.pop();
            visited[next] = false;
        }
    }
}

/// O(K^2 * n) pairwise-intersection transitive closure: merge paths sharing
/// any non-rail node, then union each class's nodes (rails excluded).
pub fn naive_partition(
    paths: &[Vec<usize>],
    vdd: usize,
    gnd: usize,
) -> BTreeSet<BTreeSet<usize>> {
    let k = paths.len();
    let sets: Vec<BTreeSet<usize>> = paths
        .iter()
        .map(|p| {
            p.iter()
                .copied()
                .filter(|&n| n != vdd && n != gnd)
                .collect()
        })
        .collect();
    let mut class: Vec<usize> = (0..k).collect();
    loop {
        let mut changed = false;
        for i in 0..k {
            for j in (i + 1)..k {
                if class[i] != class[j] && !sets[i].is_disjoint(&sets[j]) {
                    let (a, b) = (class[i].min(class[j]), class[i].max(class[j]));
                    for c in class.iter_mut() {
                        if *c == b {
                            *c = a;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut out: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, set) in sets.iter().enumerate() {
        out.entry(class[i]).or_default().extend(set.iter().copied());
    }
    out.into_values().filter(|s| !s.is_empty()).collect()
}

/// Random bipartite conduction graph with at most `max_nodes` nodes
/// (including the rails). Returns (labels, edges, vdd, gnd) suitable for
/// `ConductionGraph::from_parts` and the naive oracles.
pub fn random_conduction_graph(
    rng: &mut ChaCha12Rng,
    max_nodes: usize,
) -> (Vec<(String, bool)>, Vec<(usize, usize)>, usize, usize) {
    let n_nets = rng.gen_range(2..=(max_nodes / 2).max(2)); // includes rails
    let n_devices = rng.gen_range(1..=(max_nodes - n_nets).max(1));
    let mut labels: Vec<(String, bool)> = Vec::new();
    labels.push(("vdd".into(), false));
    labels.push(("gnd".into(), false));
    for i in 0..n_nets.saturating_sub(2) {
        labels.push((format!("n{i}"), false));
    }
    let net_count = labels.len();
    for i in 0..n_devices {
        labels.push((format!("d{i}"), true));
    }
    let mut edges = BTreeSet::new();
    for dev in 0..n_devices {
        let dev_idx = net_count + dev;
        let degree = rng.gen_range(1..=3);
        for _ in 0..degree {
            let net_idx = rng.gen_range(0..net_count);
            edges.insert((dev_idx, net_idx));
        }
    }
    (labels, edges.into_iter().collect(), 0, 1)
}

// ---------------------------------------------------------------------------
// Random netlists

const NET_POOL: [&str; 8] = ["0", "vdd", "a", "b", "c", "d", "e", "f"];
const SUFFIX_POOL: [&str; 9] = ["", "f", "p", "n", "u", "m", "k", "meg", "g"];

fn random_value(rng: &mut ChaCha12Rng) -> String {
    let mantissa: f64 = rng.gen_range(1..100_000) as f64 / 100.0;
    let suffix = SUFFIX_POOL[rng.gen_range(0..SUFFIX_POOL.len())];
    format!("{mantissa}{suffix}")
}

/// A random valid netlist: random M/R/C/I/V cards over a small net pool,
/// with literal and symbolic parameters. Always touches ground so rail
/// resolution succeeds.
pub fn random_netlist(seed: u64, max_devices: usize) -> String {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_devices.max(2));
    let mut out = String::from("* generated fixture\n");
    out.push_str("R0 vdd 0 10k\n");
    for i in 1..n {
        let pick = |rng: &mut ChaCha12Rng| NET_POOL[rng.gen_range(0..NET_POOL.len())].to_string();
        match rng.gen_range(0..5) {
            0 => {
                let model = if rng.gen_bool(0.5) { "nch" } else { "pch" };
                let bulk = if rng.gen_bool(0.5) {
                    format!(" {}", pick(&mut rng))
                } else {
                    String::new()
                };
                let w = if rng.gen_bool(0.5) {
                    random_value(&mut rng)
                } else {
                    format!("w{i}")
                };
                let l = if rng.gen_bool(0.5) {
                    random_value(&mut rng)
                } else {
                    format!("l{i}")
                };
                out.push_str(&format!(
                    "M{i} {} {} {}{bulk} {model} W={w} L={l}\n",
                    pick(&mut rng),
                    pick(&mut rng),
                    pick(&mut rng),
                ));
            }
            1 => out.push_str(&format!(
                "R{i} {} {} {}\n",
                pick(&mut rng),
                pick(&mut rng),
                random_value(&mut rng)
            )),
            2 => out.push_str(&format!(
                "C{i} {} {} {}\n",
                pick(&mut rng),
                pick(&mut rng),
                random_value(&mut rng)
            )),
            3 => out.push_str(&format!(
                "I{i} {} {} {}\n",
                pick(&mut rng),
                pick(&mut rng),
                random_value(&mut rng)
            )),
            _ => out.push_str(&format!(
                "V{i} {} {} {}\n",
                pick(&mut rng),
                pick(&mut rng),
                random_value(&mut rng)
            )),
        }
    }
    out.push_str(".end\n");
    out
}

// ---------------------------------------------------------------------------
// Golden template-instance netlists

pub struct GoldenNetlist {
    pub text: String,
    pub template: &'static str,
    /// Sorted member device names of the one embedded instance.
    pub members: Vec<String>,
}

/// Instantiate one template as a concrete sub-circuit and embed it among
/// filler devices that cannot create additional matches (filler MOS use
/// fresh, unshared nets and are never diode-connected). Boundary nets get
/// realistic loads.
pub fn golden_netlist(template: &'static str, variant: usize) -> GoldenNetlist {
    let mut rng = ChaCha12Rng::seed_from_u64(variant as u64 * 7919 + 13);
    let p_flavor = variant % 2 == 1;
    let (core, members) = instantiate(template, p_flavor);
    let mut text = format!("* golden {template} variant {variant}\n");
    text.push_str(&core);
    // Filler: resistors, caps, and isolated MOS devices on fresh nets.
    // Kept small so every golden netlist stays within 10 devices and the
    // exhaustive oracle applies.
    let n_filler = rng.gen_range(1..=3);
    for i in 0..n_filler {
        match rng.gen_range(0..3) {
            0 => text.push_str(&format!("RF{i} vdd z{i} {}k\n", rng.gen_range(1..100))),
            1 => text.push_str(&format!("CF{i} z{i} 0 {}p\n", rng.gen_range(1..10))),
            _ => {
                let model = if rng.gen_bool(0.5) { "nch" } else { "pch" };
                text.push_str(&format!(
                    "MF{i} za{i} zb{i} zc{i} zd{i} {model} W=1u L=1u\n"
                ));
            }
        }
    }
    GoldenNetlist {
        text,
        template,
        members,
    }
}

fn instantiate(template: &str, p_flavor: bool) -> (String, Vec<String>) {
    // For P flavor the source side sits at vdd and loads return to ground.
    let (model, src, load_rail) = if p_flavor {
        ("pch", "vdd", "0")
    } else {
        ("nch", "0", "vdd")
    };
    match template {
        "DiodeMOS" => (
            format!(
                "MD1 gd gd {src} {src} {model} W=2u L=1u\n\
                 R1 {load_rail} gd 10k\n"
            ),
            vec!["MD1".into()],
        ),
        "CurrentMirror" => (
            format!(
                "MR1 g g {src} {src} {model} W=2u L=1u\n\
                 MR2 o g {src} {src} {model} W=4u L=1u\n\
                 R1 {load_rail} g 20k\n\
                 R2 {load_rail} o 10k\n"
            ),
            vec!["MR1".into(), "MR2".into()],
        ),
        "DiffPair" => (
            format!(
                "MA1 x ina t {src} {model} W=2u L=1u\n\
                 MA2 y inb t {src} {model} W=2u L=1u\n\
                 R1 {load_rail} x 10k\n\
                 R2 {load_rail} y 10k\n\
                 R3 t {src} 5k\n\
                 V1 ina 0 0.6\n\
                 V2 inb 0 0.6\n"
            ),
            vec!["MA1".into(), "MA2".into()],
        ),
        "Cascode" => (
            format!(
                "MC1 mid inlow {src} {src} {model} W=2u L=1u\n\
                 MC2 oc bias mid {src} {model} W=2u L=1u\n\
                 R1 {load_rail} oc 10k\n\
                 V1 inlow 0 0.6\n\
                 V2 bias 0 0.9\n"
            ),
            vec!["MC1".into(), "MC2".into()],
        ),
        "ClassAB" => (
            "MU1 outab gp vdd vdd pch W=4u L=1u\n\
             MD1 outab gn 0 0 nch W=2u L=1u\n\
             C1 outab 0 1p\n\
             V1 gp 0 0.9\n\
             V2 gn 0 0.6\n"
                .to_string(),
            vec!["MD1".into(), "MU1".into()],
        ),
        "CascodeMirror" => (
            format!(
                "MM1 r r rl {src} {model} W=2u L=1u\n\
                 MM2 rl rl {src} {src} {model} W=2u L=1u\n\
                 MM3 oc r mm {src} {model} W=2u L=1u\n\
                 MM4 mm rl {src} {src} {model} W=2u L=1u\n\
                 R1 {load_rail} r 20k\n\
                 R2 {load_rail} oc 10k\n"
            ),
            vec!["MM1".into(), "MM2".into(), "MM3".into(), "MM4".into()],
        ),
        other => panic!("no instantiation for template {other}"),
    }
}

// ---------------------------------------------------------------------------
// Scripted evaluator over the unit box (optimizer mechanics tests)

use amsizer::eval::{EvalError, Evaluator};
use amsizer::score::Measurement;
use amsizer::space::{DesignSpace, Scale, VarSpec};

/// Evaluator computing a single metric `y = f(x)` over `[0,1]^dims`.
pub struct ScriptedEvaluator {
    pub space: DesignSpace,
    f: fn(&[f64]) -> f64,
}

impl ScriptedEvaluator {
    pub fn new(dims: usize, f: fn(&[f64]) -> f64) -> ScriptedEvaluator {
        let space = DesignSpace::new(
            (0..dims)
                .map(|i| VarSpec {
                    name: format!("x{i}"),
                    lower: 0.0,
                    upper: 1.0,
                    scale: Scale::Linear,
                })
                .collect(),
        )
        .unwrap();
        ScriptedEvaluator { space, f }
    }
}

impl Evaluator for ScriptedEvaluator {
    fn id(&self) -> &str {
        "scripted"
    }

    fn space(&self) -> &DesignSpace {
        &self.space
    }

    fn metric_names(&self) -> Vec<String> {
        vec!["y".into()]
    }

    fn run(&self, values: &BTreeMap<String, f64>) -> Result<Measurement, EvalError> {
        let mut indexed: Vec<(usize, f64)> = values
            .iter()
            .map(|(k, v)| (k[1..].parse::<usize>().unwrap(), *v))
            .collect();
        indexed.sort_by_key(|(i, _)| *i);
        let xs: Vec<f64> = indexed.into_iter().map(|(_, v)| v).collect();
        Ok(Measurement::from_values(BTreeMap::from([(
            "y".to_string(),
            (self.f)(&xs),
        )])))
    }
}
