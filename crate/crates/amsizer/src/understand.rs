//! Iterative circuit understanding: rounds of hypothesize, self-assessed
//! confidence, targeted refinement queries on low-confidence items, and a
//! deterministic correctness checklist. Terminates when the minimum item
//! confidence clears the threshold and the checklist passes, or at the
//! round cap with the best annotation so far.
//!
//! The checklist is rule evaluation over the hierarchy, not advisor
//! self-grading: (a) every device, module, and stage carries a role;
//! (b) role claims are consistent with structure (a tail current source
//! must feed a diff-pair tail net, an input-pair transistor must belong to
//! a DiffPair module, mirror transistors must share a gate with a
//! diode-connected device or sit in a mirror module); (c) stage function
//! labels agree with the stage graph's primary-I/O flags.

use crate::advisor::{call_with_repair, Advisor, AdvisorError, AdvisorRequest, Transcript};
use crate::hierarchy::Hierarchy;
use crate::space::{TieGroup, TieRelation, TyingPlan};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UnderstandError {
    #[error(transparent)]
    Advisor(#[from] AdvisorError),
    #[error("understanding config invalid: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopConfig {
    pub confidence_threshold: f64,
    pub max_rounds: u32,
    /// Schema-repair retries per advisor call.
    pub retries: u32,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            confidence_threshold: 0.8,
            max_rounds: 5,
            retries: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub role: String,
    pub confidence: f64,
}

/// Functional annotation over all hierarchy items.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub device_roles: BTreeMap<String, Judgment>,
    pub module_functions: BTreeMap<String, Judgment>,
    pub stage_functions: BTreeMap<String, Judgment>,
}

impl Annotation {
    pub fn empty_for(h: &Hierarchy) -> Annotation {
        let blank = |_: &str| Judgment {
            role: String::new(),
            confidence: 0.0,
        };
        Annotation {
            device_roles: h
                .components
                .iter()
                .map(|c| (c.name.clone(), blank(&c.name)))
                .collect(),
            module_functions: h
                .modules
                .iter()
                .map(|m| (m.id.clone(), blank(&m.id)))
                .collect(),
            stage_functions: h
                .stages
                .iter()
                .map(|s| (s.id.clone(), blank(&s.id)))
                .collect(),
        }
    }

    fn iter_all(&self) -> impl Iterator<Item = (String, &Judgment)> {
        self.device_roles
            .iter()
            .map(|(k, v)| (format!("device:{k}"), v))
            .chain(
                self.module_functions
                    .iter()
                    .map(|(k, v)| (format!("module:{k}"), v)),
            )
            .chain(
                self.stage_functions
                    .iter()
                    .map(|(k, v)| (format!("stage:{k}"), v)),
            )
    }

    pub fn min_confidence(&self) -> f64 {
        self.iter_all()
            .map(|(_, j)| j.confidence)
            .fold(f64::INFINITY, f64::min)
            .min(1.0)
    }

    /// Items below the confidence threshold, as focus identifiers.
    pub fn low_confidence_items(&self, threshold: f64) -> Vec<String> {
        self.iter_all()
            .filter(|(_, j)| j.confidence < threshold)
            .map(|(id, _)| id)
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub pass: bool,
    pub failures: Vec<String>,
}

impl CheckResult {
    fn from_failures(failures: Vec<String>) -> CheckResult {
        CheckResult {
            pass: failures.is_empty(),
            failures,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChecklistReport {
    /// (a) all devices, modules, and stages identified.
    pub coverage: CheckResult,
    /// (b) intra-stage role/connection consistency.
    pub consistency: CheckResult,
    /// (c) hierarchy-vs-function alignment.
    pub alignment: CheckResult,
}

impl ChecklistReport {
    pub fn pass(&self) -> bool {
        self.coverage.pass && self.consistency.pass && self.alignment.pass
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnderstandOutcome {
    pub annotation: Annotation,
    pub report: ChecklistReport,
    pub transcript: Transcript,
    pub converged: bool,
    pub rounds: u32,
}

// ---------------------------------------------------------------------------
// Advisor response handling

#[derive(Debug, Default, Deserialize)]
struct PartialAnnotation {
    #[serde(default)]
    device_roles: BTreeMap<String, Judgment>,
    #[serde(default)]
    module_functions: BTreeMap<String, Judgment>,
    #[serde(default)]
    stage_functions: BTreeMap<String, Judgment>,
}

fn annotation_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "device_roles": {"type": "object", "additionalProperties":
                {"type": "object", "properties": {"role": {"type": "string"},
                 "confidence": {"type": "number", "minimum": 0, "maximum": 1}}}},
            "module_functions": {"$ref": "#/properties/device_roles"},
            "stage_functions": {"$ref": "#/properties/device_roles"}
        }
    })
}

/// Parse and validate an annotation response; unknown item names are
/// dropped with a log line, out-of-range confidences are a schema error.
fn merge_response(
    h: &Hierarchy,
    ann: &mut Annotation,
    value: &Value,
    round: u32,
) -> Result<(), AdvisorError> {
    let partial: PartialAnnotation =
        serde_json::from_value(value.clone()).map_err(|e| AdvisorError::Malformed {
            round,
            detail: e.to_string(),
        })?;
    for (maps, source, kind) in [
        (&mut ann.device_roles, partial.device_roles, "device"),
        (&mut ann.module_functions, partial.module_functions, "module"),
        (&mut ann.stage_functions, partial.stage_functions, "stage"),
    ] {
        for (name, judgment) in source {
            if !(0.0..=1.0).contains(&judgment.confidence) {
                return Err(AdvisorError::Malformed {
                    round,
                    detail: format!(
                        "confidence {} for {kind} `{name}` outside [0,1]",
                        judgment.confidence
                    ),
                });
            }
            match maps.get_mut(&name) {
                Some(slot) => *slot = judgment,
                None => {
                    log::warn!("advisor annotated unknown {kind} `{name}`; dropped");
                }
            }
        }
    }
    let _ = h;
    Ok(())
}

// ---------------------------------------------------------------------------
// The loop

/// Run the understanding loop against an advisor.
pub fn understand(
    h: &Hierarchy,
    advisor: &dyn Advisor,
    cfg: &LoopConfig,
) -> Result<UnderstandOutcome, UnderstandError> {
    if !(0.0 < cfg.confidence_threshold && cfg.confidence_threshold <= 1.0) {
        return Err(UnderstandError::BadConfig(
            "confidence threshold must be in (0, 1]".into(),
        ));
    }
    if cfg.max_rounds < 1 {
        return Err(UnderstandError::BadConfig("max_rounds must be >= 1".into()));
    }

    let hierarchy_json = serde_json::to_value(h).expect("hierarchy serializes");
    let mut annotation = Annotation::empty_for(h);
    let mut transcript = Transcript::default();
    let mut report = run_checklist(h, &annotation);

    for round in 1..=cfg.max_rounds {
        let focus = if round == 1 {
            Vec::new()
        } else {
            let mut focus = annotation.low_confidence_items(cfg.confidence_threshold);
            for failure in report
                .coverage
                .failures
                .iter()
                .chain(&report.consistency.failures)
                .chain(&report.alignment.failures)
            {
                focus.push(failure.clone());
            }
            focus.sort();
            focus.dedup();
            focus
        };
        let purpose = if round == 1 { "hypothesize" } else { "refine" };
        let task = if round == 1 {
            "Assign a functional role to every device, module, and stage of the circuit \
             hierarchy, with a confidence in [0,1] for each."
        } else {
            "Revise the roles of the focus items; emit entries only for items you re-assessed."
        };
        let mut request = AdvisorRequest::new(purpose, round, task);
        request.context.hierarchy_json = hierarchy_json.clone();
        request.context.focus_items = focus;
        request.response_schema = annotation_schema();

        let value = call_with_repair(advisor, &request, cfg.retries, &mut transcript, |v| {
            let mut candidate = annotation.clone();
            merge_response(h, &mut candidate, v, round)?;
            Ok(candidate)
        })?;
        annotation = value;
        report = run_checklist(h, &annotation);

        if annotation.min_confidence() >= cfg.confidence_threshold && report.pass() {
            return Ok(UnderstandOutcome {
                annotation,
                report,
                transcript,
                converged: true,
                rounds: round,
            });
        }
    }

    Ok(UnderstandOutcome {
        annotation,
        report,
        transcript,
        converged: false,
        rounds: cfg.max_rounds,
    })
}

// ---------------------------------------------------------------------------
// Checklist

fn role_contains(j: &Judgment, needle: &str) -> bool {
    j.role.to_ascii_lowercase().contains(needle)
}

/// Deterministic rule evaluation; same inputs, same report.
pub fn run_checklist(h: &Hierarchy, ann: &Annotation) -> ChecklistReport {
    let mut coverage = Vec::new();
    for c in &h.components {
        match ann.device_roles.get(&c.name) {
            Some(j) if !j.role.trim().is_empty() => {}
            _ => coverage.push(format!("device:{}", c.name)),
        }
    }
    for m in &h.modules {
        match ann.module_functions.get(&m.id) {
            Some(j) if !j.role.trim().is_empty() => {}
            _ => coverage.push(format!("module:{}", m.id)),
        }
    }
    for s in &h.stages {
        match ann.stage_functions.get(&s.id) {
            Some(j) if !j.role.trim().is_empty() => {}
            _ => coverage.push(format!("stage:{}", s.id)),
        }
    }

    let mut consistency = Vec::new();
    let diff_pair_tails: BTreeSet<&str> = h
        .modules
        .iter()
        .filter(|m| m.template == "DiffPair")
        .filter_map(|m| m.ports.get("tail").map(|p| p.net.as_str()))
        .collect();
    let diode_gate_nets: BTreeSet<&str> = h
        .components
        .iter()
        .filter(|c| {
            matches!(c.kind.as_str(), "nmos" | "pmos")
                && c.terminals.get("G") == c.terminals.get("D")
        })
        .filter_map(|c| c.terminals.get("G").map(|n| n.as_str()))
        .collect();

    for c in &h.components {
        let Some(j) = ann.device_roles.get(&c.name) else {
            continue;
        };
        if role_contains(j, "tail current source") {
            let feeds_tail = c
                .terminals
                .iter()
                .filter(|(role, _)| matches!(role.as_str(), "D" | "S"))
                .any(|(_, net)| diff_pair_tails.contains(net.as_str()));
            if !feeds_tail {
                consistency.push(format!(
                    "device:{}: labeled tail current source but no drain/source edge reaches a \
                     DiffPair tail net",
                    c.name
                ));
            }
        }
        if role_contains(j, "input pair") {
            let in_pair = c
                .module
                .as_ref()
                .and_then(|m| h.module(m))
                .is_some_and(|m| m.template == "DiffPair");
            if !in_pair {
                consistency.push(format!(
                    "device:{}: labeled input pair transistor but not a DiffPair member",
                    c.name
                ));
            }
        }
        if role_contains(j, "mirror") {
            let in_mirror_module = c
                .module
                .as_ref()
                .and_then(|m| h.module(m))
                .is_some_and(|m| matches!(m.template.as_str(), "CurrentMirror" | "CascodeMirror"));
            let shares_diode_gate = c
                .terminals
                .get("G")
                .is_some_and(|g| diode_gate_nets.contains(g.as_str()));
            if !(in_mirror_module || shares_diode_gate) {
                consistency.push(format!(
                    "device:{}: labeled mirror transistor but neither in a mirror module nor \
                     gate-tied to a diode-connected device",
                    c.name
                ));
            }
        }
    }

    let mut alignment = Vec::new();
    for s in &h.stages {
        let Some(j) = ann.stage_functions.get(&s.id) else {
            continue;
        };
        if role_contains(j, "input") && !s.contains_primary_input {
            alignment.push(format!(
                "stage:{}: labeled `{}` but contains no primary input",
                s.id, j.role
            ));
        }
        if role_contains(j, "output") && !s.contains_primary_output {
            alignment.push(format!(
                "stage:{}: labeled `{}` but contains no primary output",
                s.id, j.role
            ));
        }
    }

    ChecklistReport {
        coverage: CheckResult::from_failures(coverage),
        consistency: CheckResult::from_failures(consistency),
        alignment: CheckResult::from_failures(alignment),
    }
}

// ---------------------------------------------------------------------------
// Symmetry-aware parameter assignment

#[derive(Debug, Deserialize)]
struct TieSuggestion {
    vars: Vec<String>,
    relation: Value,
}

#[derive(Debug, Default, Deserialize)]
struct TieResponse {
    #[serde(default)]
    groups: Vec<TieSuggestion>,
}

/// Structural tying from module symmetry: DiffPair and mirror members share
/// W and L symbols. Groups over a shared symbol merge transitively; single
/// symbol groups are no-ops and dropped. The advisor may add ratio groups;
/// invalid suggestions are dropped with a logged reason, never applied.
pub fn assign_parameters(
    h: &Hierarchy,
    _ann: &Annotation,
    advisor: Option<&dyn Advisor>,
    transcript: &mut Transcript,
) -> TyingPlan {
    let symbols = h.symbols();
    let n_vars = symbols.len();

    // union-find over symbols for the Equal groups
    let mut parent: BTreeMap<String, String> = symbols
        .iter()
        .map(|s| (s.clone(), s.clone()))
        .collect();
    fn find(parent: &mut BTreeMap<String, String>, s: &str) -> String {
        let p = parent[s].clone();
        if p == s {
            return p;
        }
        let root = find(parent, &p);
        parent.insert(s.to_string(), root.clone());
        root
    }

    for module in &h.modules {
        if !matches!(
            module.template.as_str(),
            "DiffPair" | "CurrentMirror" | "CascodeMirror"
        ) {
            continue;
        }
        for key in ["W", "L"] {
            let syms: Vec<String> = module
                .members
                .iter()
                .filter_map(|name| h.component(name))
                .filter_map(|c| c.params.get(key))
                .filter_map(|v| v.symbol().map(str::to_string))
                .collect();
            for pair in syms.windows(2) {
                let a = find(&mut parent, &pair[0]);
                let b = find(&mut parent, &pair[1]);
                if a != b {
                    parent.insert(a, b);
                }
            }
        }
    }

    let mut classes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in &symbols {
        let root = find(&mut parent, s);
        classes.entry(root).or_default().push(s.clone());
    }
    let mut groups: Vec<TieGroup> = classes
        .into_values()
        .filter(|vars| vars.len() >= 2)
        .map(|mut vars| {
            vars.sort();
            TieGroup {
                vars,
                relation: TieRelation::Equal,
            }
        })
        .collect();
    groups.sort_by(|a, b| a.vars.cmp(&b.vars));

    // Advisor may confirm or extend with ratio groups.
    if let Some(advisor) = advisor {
        let mut request = AdvisorRequest::new(
            "tie",
            0,
            "Propose additional parameter tying groups (equality or integer ratios) implied \
             by circuit symmetry; do not repeat the structural groups.",
        );
        request.context.hierarchy_json = serde_json::to_value(h).expect("hierarchy serializes");
        request.context.extra = json!({
            "symbols": symbols,
            "structural_groups": groups,
        });
        request.response_schema = json!({
            "type": "object",
            "properties": {"groups": {"type": "array", "items": {"type": "object",
                "properties": {"vars": {"type": "array", "items": {"type": "string"}},
                               "relation": {}}}}}
        });
        match advisor.respond(&request) {
            Ok(response) => {
                transcript.record(&request, &response);
                if let Ok(parsed) = serde_json::from_value::<TieResponse>(response) {
                    let mut tied: BTreeSet<String> = groups
                        .iter()
                        .flat_map(|g| g.vars.iter().cloned())
                        .collect();
                    for suggestion in parsed.groups {
                        match validate_suggestion(&suggestion, &symbols, &tied) {
                            Ok(group) => {
                                tied.extend(group.vars.iter().cloned());
                                groups.push(group);
                            }
                            Err(reason) => {
                                log::warn!("dropped advisor tying suggestion: {reason}");
                            }
                        }
                    }
                }
            }
            Err(err) => {
                log::warn!("advisor unavailable for tying ({err}); structural groups only");
            }
        }
    }

    let merged: usize = groups.iter().map(|g| g.vars.len() - 1).sum();
    TyingPlan {
        groups,
        reduced_dimension: n_vars - merged,
    }
}

fn validate_suggestion(
    s: &TieSuggestion,
    symbols: &[String],
    already_tied: &BTreeSet<String>,
) -> Result<TieGroup, String> {
    if s.vars.len() < 2 {
        return Err("group has fewer than two variables".into());
    }
    for var in &s.vars {
        if !symbols.contains(var) {
            return Err(format!("unknown variable `{var}`"));
        }
        if already_tied.contains(var) {
            return Err(format!("variable `{var}` already tied"));
        }
    }
    let relation = if s.relation == json!("equal") || s.relation == json!("Equal") {
        TieRelation::Equal
    } else if let (Some(num), Some(den)) = (
        s.relation.get("ratio").and_then(|r| r.get(0)).and_then(Value::as_i64),
        s.relation.get("ratio").and_then(|r| r.get(1)).and_then(Value::as_i64),
    ) {
        if s.vars.len() != 2 {
            return Err("ratio groups must be pairs".into());
        }
        if num <= 0 || den <= 0 {
            return Err("ratio must be positive".into());
        }
        TieRelation::Ratio { num, den }
    } else {
        return Err(format!("unrecognized relation {}", s.relation));
    };
    let mut vars = s.vars.clone();
    vars.sort();
    vars.dedup();
    if vars.len() != s.vars.len() {
        return Err("duplicate variable in group".into());
    }
    Ok(TieGroup {
        vars: s.vars.clone(),
        relation,
    })
}
