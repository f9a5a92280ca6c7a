//! End-to-end orchestration: analyze (parse, graph, match, stages,
//! hierarchy), understand (advisor loop plus tying), prune, and optimize
//! over seeds. Also exposes the built-in benchmark bundles (netlist, spec,
//! mock model, scripted-advisor fixture) used by the CLI and tests.

use crate::advisor::{Advisor, AdvisorRequest, Transcript};
use crate::eval::Evaluator;
use crate::graph::{build_graph, CircuitGraph};
use crate::hierarchy::{build_hierarchy, Hierarchy, IoNets};
use crate::netlist::{parse_netlist_raw, resolve_rails, Netlist};
use crate::opt::{optimize, OptConfig, OptReport};
use crate::score::SpecSet;
use crate::space::{DesignSpace, RatioConstraint, TyingPlan};
use crate::stages::{
    conduction_graph, enumerate_paths, merge_stages, stage_graph, unstaged_nodes, StageError,
    StageGraph, DEFAULT_PATH_CAP,
};
use crate::templates::{builtin_library, match_and_collapse, Supernode, Template};
use crate::understand::{assign_parameters, understand, LoopConfig, UnderstandOutcome};
use serde_json::json;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Netlist(#[from] crate::netlist::NetlistError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Match(#[from] crate::templates::MatchError),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    Hierarchy(#[from] crate::hierarchy::HierarchyError),
    #[error(transparent)]
    Understand(#[from] crate::understand::UnderstandError),
    #[error(transparent)]
    Opt(#[from] crate::opt::OptError),
    #[error(transparent)]
    Score(#[from] crate::score::ScoreError),
    #[error(transparent)]
    Space(#[from] crate::space::SpaceError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub io: IoNets,
    pub templates: Option<Vec<Template>>,
    pub ground_aliases: Vec<String>,
    pub supply_aliases: Vec<String>,
    pub path_cap: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            io: IoNets::default(),
            templates: None,
            ground_aliases: crate::netlist::DEFAULT_GROUND_ALIASES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            supply_aliases: crate::netlist::DEFAULT_SUPPLY_ALIASES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            path_cap: DEFAULT_PATH_CAP,
        }
    }
}

pub struct AnalyzeOutput {
    pub netlist: Netlist,
    pub raw_graph: CircuitGraph,
    pub collapsed: CircuitGraph,
    pub supernodes: Vec<Supernode>,
    pub hierarchy: Hierarchy,
}

/// The full topological extraction: parse, graph, match+collapse, stage
/// grouping, hierarchy container. Degenerate circuits (no rails, no
/// conduction path) produce an empty stage list plus a warning instead of
/// failing.
pub fn analyze(text: &str, opts: &AnalyzeOptions) -> Result<AnalyzeOutput, PipelineError> {
    let ground: Vec<&str> = opts.ground_aliases.iter().map(|s| s.as_str()).collect();
    let supply: Vec<&str> = opts.supply_aliases.iter().map(|s| s.as_str()).collect();
    let netlist = resolve_rails(parse_netlist_raw(text)?, &ground, &supply)?;
    let raw_graph = build_graph(&netlist)?;
    let library;
    let templates = match &opts.templates {
        Some(t) => t.as_slice(),
        None => {
            library = builtin_library();
            &library
        }
    };
    let (collapsed, supernodes) = match_and_collapse(&raw_graph, templates)?;

    let mut warnings = netlist.warnings.clone();
    let (stages, stage_edges, unstaged, cg) = match conduction_graph(&collapsed) {
        Ok(cg) => match enumerate_paths(&cg, opts.path_cap) {
            Ok(paths) => {
                let mut stages = merge_stages(&cg, &paths);
                let sg = stage_graph(
                    &collapsed,
                    &cg,
                    &mut stages,
                    &opts.io.inputs,
                    &opts.io.outputs,
                )?;
                let unstaged = unstaged_nodes(&collapsed, &cg, &stages);
                (stages, sg, unstaged, Some(cg))
            }
            Err(StageError::NoConductionPath) => {
                warnings.push("no VDD-to-GND conduction path; stage list is empty".into());
                let unstaged = unstaged_nodes(&collapsed, &cg, &[]);
                (Vec::new(), StageGraph::default(), unstaged, Some(cg))
            }
            Err(err) => return Err(err.into()),
        },
        Err(StageError::MissingRail(which)) => {
            warnings.push(format!("missing {which} rail; stage analysis skipped"));
            let unstaged: Vec<String> = collapsed
                .device_side_nodes()
                .map(|n| n.label.clone())
                .collect();
            (Vec::new(), StageGraph::default(), unstaged, None)
        }
        Err(err) => return Err(err.into()),
    };

    let hierarchy = build_hierarchy(
        &netlist,
        &collapsed,
        &supernodes,
        &stages,
        cg.as_ref(),
        &stage_edges,
        &unstaged,
        &opts.io,
        warnings,
    );
    hierarchy.validate()?;

    Ok(AnalyzeOutput {
        netlist,
        raw_graph,
        collapsed,
        supernodes,
        hierarchy,
    })
}

pub struct UnderstandingResult {
    /// Hierarchy with annotations attached.
    pub hierarchy: Hierarchy,
    pub outcome: UnderstandOutcome,
    pub tying: TyingPlan,
}

/// Run the understanding loop, attach annotations, and derive the tying
/// plan (structural symmetry plus optional advisor suggestions, sharing one
/// transcript).
pub fn run_understanding(
    mut hierarchy: Hierarchy,
    advisor: &dyn Advisor,
    cfg: &LoopConfig,
) -> Result<UnderstandingResult, PipelineError> {
    let mut outcome = understand(&hierarchy, advisor, cfg)?;
    let tying = assign_parameters(
        &hierarchy,
        &outcome.annotation,
        Some(advisor),
        &mut outcome.transcript,
    );
    hierarchy.annotations = Some(outcome.annotation.clone());
    Ok(UnderstandingResult {
        hierarchy,
        outcome,
        tying,
    })
}

/// Structural-only tying (no advisor).
pub fn structural_tying(hierarchy: &Hierarchy) -> TyingPlan {
    let annotation = crate::understand::Annotation::empty_for(hierarchy);
    let mut transcript = Transcript::default();
    assign_parameters(hierarchy, &annotation, None, &mut transcript)
}

#[derive(Debug, Clone, Default)]
pub struct PruningPlan {
    pub boxes: BTreeMap<String, (f64, f64)>,
    pub ratios: Vec<RatioConstraint>,
}

#[derive(Debug, serde::Deserialize)]
struct PruneResponse {
    #[serde(default)]
    boxes: BTreeMap<String, (f64, f64)>,
    #[serde(default)]
    ratios: Vec<RatioConstraint>,
}

/// Ask the advisor for conservative search-space pruning: per-variable box
/// tightening plus pairwise ratio constraints. Boxes outside the design
/// bounds are clipped; unknown variables are dropped with a log line. On
/// advisor failure the plan is empty (sampling covers the full box).
pub fn advisor_pruning(
    hierarchy: &Hierarchy,
    space: &DesignSpace,
    advisor: &dyn Advisor,
    transcript: &mut Transcript,
) -> PruningPlan {
    let mut request = AdvisorRequest::new(
        "prune",
        0,
        "Propose a conservative pruning of the design space: per-variable [low, high] boxes \
         under `boxes` and width-over-length style constraints under `ratios`. Keep the \
         pruning loose; exclude only clearly infeasible corners.",
    );
    request.context.hierarchy_json = serde_json::to_value(hierarchy).expect("hierarchy");
    request.context.extra = json!({ "design_space": space.vars() });
    request.response_schema = json!({
        "type": "object",
        "properties": {
            "boxes": {"type": "object", "additionalProperties":
                {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}},
            "ratios": {"type": "array", "items": {"type": "object", "properties": {
                "num": {"type": "string"}, "den": {"type": "string"},
                "min": {"type": "number"}, "max": {"type": "number"}}}}
        }
    });

    match advisor.respond(&request) {
        Ok(response) => {
            transcript.record(&request, &response);
            match serde_json::from_value::<PruneResponse>(response) {
                Ok(parsed) => {
                    let known = space.names();
                    let mut plan = PruningPlan::default();
                    for (name, (lo, hi)) in parsed.boxes {
                        if known.contains(&name) && lo.is_finite() && hi.is_finite() && lo < hi {
                            plan.boxes.insert(name, (lo, hi));
                        } else {
                            log::warn!("dropped pruning box for `{name}`");
                        }
                    }
                    for rc in parsed.ratios {
                        if known.contains(&rc.num) && known.contains(&rc.den) {
                            plan.ratios.push(rc);
                        } else {
                            log::warn!("dropped ratio constraint {}/{}", rc.num, rc.den);
                        }
                    }
                    plan
                }
                Err(err) => {
                    log::warn!("prune response malformed ({err}); no pruning applied");
                    PruningPlan::default()
                }
            }
        }
        Err(err) => {
            log::warn!("advisor unavailable for pruning ({err}); no pruning applied");
            PruningPlan::default()
        }
    }
}

/// Build the optimization space from an evaluator's raw variables, a tying
/// plan, and a pruning plan.
pub fn build_space(
    evaluator: &dyn Evaluator,
    tying: Option<&TyingPlan>,
    pruning: Option<&PruningPlan>,
) -> Result<DesignSpace, PipelineError> {
    let mut space = evaluator.space().clone();
    if let Some(plan) = tying {
        space = space.apply_tying(plan)?;
    }
    if let Some(plan) = pruning {
        if !plan.boxes.is_empty() {
            space.set_pruned_box(&plan.boxes)?;
        }
        space.ratio_constraints.extend(plan.ratios.iter().cloned());
    }
    Ok(space)
}

/// Run one optimization per seed (in parallel under the `parallel`
/// feature); each run has isolated state, so results are ordered by seed
/// and independent of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_seeds(
    space: &DesignSpace,
    spec: &SpecSet,
    evaluator: &dyn Evaluator,
    advisor: Option<&dyn Advisor>,
    hierarchy: Option<&Hierarchy>,
    base_cfg: &OptConfig,
    seeds: &[u64],
) -> Result<Vec<OptReport>, PipelineError> {
    let results = crate::par::map_collect(seeds, |&seed| {
        let cfg = OptConfig {
            seed,
            ..base_cfg.clone()
        };
        optimize(space, spec, evaluator, advisor, hierarchy, &cfg)
    });
    results
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(Into::into)
}

// ---------------------------------------------------------------------------
// Built-in benchmarks

pub struct Benchmark {
    pub name: &'static str,
    pub netlist: &'static str,
    pub spec_json: &'static str,
    pub advisor_fixture: &'static str,
    pub io: IoNets,
}

pub fn builtin_benchmarks() -> Vec<Benchmark> {
    let io = |inputs: &[&str], outputs: &[&str]| IoNets {
        inputs: inputs.iter().map(|s| s.to_string()).collect(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        Benchmark {
            name: "ota",
            netlist: include_str!("../data/netlists/ota.sp"),
            spec_json: include_str!("../data/specs/ota.json"),
            advisor_fixture: include_str!("../data/advisors/ota_stub.json"),
            io: io(&["inp", "inn"], &["out"]),
        },
        Benchmark {
            name: "fcota",
            netlist: include_str!("../data/netlists/fcota.sp"),
            spec_json: include_str!("../data/specs/fcota.json"),
            advisor_fixture: include_str!("../data/advisors/fcota_stub.json"),
            io: io(&["inp", "inn"], &["out"]),
        },
        Benchmark {
            name: "sacmp",
            netlist: include_str!("../data/netlists/sacmp.sp"),
            spec_json: include_str!("../data/specs/sacmp.json"),
            advisor_fixture: include_str!("../data/advisors/sacmp_stub.json"),
            io: io(&["inp", "inn", "clk"], &["q1", "q2"]),
        },
        Benchmark {
            name: "ldo",
            netlist: include_str!("../data/netlists/ldo.sp"),
            spec_json: include_str!("../data/specs/ldo.json"),
            advisor_fixture: include_str!("../data/advisors/ldo_stub.json"),
            io: io(&["vref"], &["vout"]),
        },
    ]
}

pub fn builtin_benchmark(name: &str) -> Option<Benchmark> {
    builtin_benchmarks().into_iter().find(|b| b.name == name)
}

pub fn builtin_netlist(name: &str) -> Option<&'static str> {
    builtin_benchmark(name).map(|b| b.netlist)
}

pub fn builtin_spec(name: &str) -> Result<SpecSet, crate::score::ScoreError> {
    let bench = builtin_benchmark(name).ok_or_else(|| {
        crate::score::ScoreError::InvalidSpec(format!("no builtin spec `{name}`"))
    })?;
    SpecSet::from_json(bench.spec_json)
}
