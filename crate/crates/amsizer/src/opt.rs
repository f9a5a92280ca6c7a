//! Trust-region Bayesian optimization with stagnation-triggered advisor
//! intervention.
//!
//! The loop: hybrid initial sampling, then per iteration a GP refit, an
//! expected-improvement proposal from a scrambled low-discrepancy candidate
//! cloud inside the region, evaluation, and the radius update — expand and
//! recenter on strict improvement, contract otherwise, both clipped into
//! [r_min, r_max]. When the no-improvement counter reaches K the advisor is
//! asked for a new center and radius; on failure a deterministic restart
//! recenters at the best point outside the current region at half the
//! maximum radius. Feasibility mode stops at the first zero figure of merit.

use crate::advisor::{call_with_repair, Advisor, AdvisorRequest, Transcript};
use crate::eval::{evaluate, DesignPoint, Evaluator, Provenance};
use crate::gp::{fit_surrogate, GpConfig, GpParams, Surrogate};
use crate::hierarchy::Hierarchy;
use crate::par;
use crate::sample::{initial_sample, latin_hypercube, scrambled_halton};
use crate::score::{fom, Measurement, ScoreConfig, ScoreMode, SpecSet};
use crate::space::DesignSpace;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("optimizer config invalid: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Space(#[from] crate::space::SpaceError),
    #[error(transparent)]
    Score(#[from] crate::score::ScoreError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptConfig {
    /// Initial sample count; defaults to 2x the free dimension.
    pub n_init: Option<usize>,
    pub n_iter: usize,
    /// Stagnation threshold K for advisor intervention.
    pub stagnation_k: u32,
    /// Proposals per iteration.
    pub batch: usize,
    /// Pruned-space sampling ratio.
    pub alpha: f64,
    pub r_init: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub alpha_inc: f64,
    pub alpha_dec: f64,
    /// Candidate-cloud size for acquisition.
    pub candidates: usize,
    pub dedupe_tol: f64,
    pub seed: u64,
    pub mode: ScoreMode,
    /// Independent trust regions sharing the budget round-robin.
    pub regions: usize,
    /// GP training window (most recent evaluations).
    pub max_gp_points: usize,
    pub failure_penalty: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            n_init: None,
            n_iter: 60,
            stagnation_k: 5,
            batch: 1,
            alpha: 0.8,
            r_init: 0.4,
            r_min: 0.015625, // 2^-6
            r_max: 0.8,
            alpha_inc: 1.5,
            alpha_dec: 0.75,
            candidates: 2000,
            dedupe_tol: 1e-6,
            seed: 1,
            mode: ScoreMode::Feasibility,
            regions: 1,
            max_gp_points: 256,
            failure_penalty: 1.0,
        }
    }
}

impl OptConfig {
    fn validate(&self) -> Result<(), OptError> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max) {
            return Err(OptError::BadConfig("need 0 < r_min < r_max".into()));
        }
        if self.alpha_inc <= 1.0 || !(0.0..1.0).contains(&self.alpha_dec) {
            return Err(OptError::BadConfig(
                "need alpha_inc > 1 and alpha_dec in (0,1)".into(),
            ));
        }
        if self.batch == 0 || self.candidates == 0 || self.regions == 0 {
            return Err(OptError::BadConfig(
                "batch, candidates, regions must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(OptError::BadConfig("alpha must be in [0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustRegion {
    /// Center in unit coordinates.
    pub center: Vec<f64>,
    pub radius: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub alpha_inc: f64,
    pub alpha_dec: f64,
}

/// The radius rule: expand (clipped to r_max) on improvement, contract
/// (clipped to r_min) otherwise.
pub fn update_trust_region(tr: &mut TrustRegion, improved: bool) {
    if improved {
        tr.radius = (tr.alpha_inc * tr.radius).min(tr.r_max);
    } else {
        tr.radius = (tr.alpha_dec * tr.radius).max(tr.r_min);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub eval_index: u64,
    /// 0 for initial samples, 1-based loop iteration otherwise.
    pub iteration: u64,
    pub point: BTreeMap<String, f64>,
    pub unit: Vec<f64>,
    pub measurement: Measurement,
    pub scores: Vec<(String, f64)>,
    pub fom: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: u64,
    pub region: usize,
    pub radius_before: f64,
    pub radius_after: f64,
    pub improved: bool,
    pub no_imp_after: u32,
    pub incumbent_fom: f64,
    pub intervened: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    /// Feasibility mode reached FoM = 0.
    Feasible,
    /// Budget ran out without a feasible point (feasibility mode).
    BudgetExhausted,
    /// Single-objective run completed its budget.
    Completed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestEntry {
    pub point: BTreeMap<String, f64>,
    pub fom: f64,
    pub scores: Vec<(String, f64)>,
    pub measurement: Measurement,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptReport {
    pub seed: u64,
    pub evaluator_id: String,
    pub mode: ScoreMode,
    pub status: RunStatus,
    pub best: BestEntry,
    pub evaluations: u64,
    pub advisor_calls: usize,
    pub samples_to_feasible: Option<u64>,
    pub history: Vec<HistoryEntry>,
    pub trace: Vec<IterationTrace>,
    pub warnings: Vec<String>,
    /// Wall time never lands in report.json (kept reproducible); the CLI
    /// writes it to a separate metadata file.
    #[serde(skip)]
    pub wall_time: f64,
}

// ---------------------------------------------------------------------------
// Acquisition

fn expected_improvement(mean: f64, variance: f64, f_best: f64) -> f64 {
    let sigma = variance.sqrt();
    if sigma < 1e-12 {
        return (mean - f_best).max(0.0);
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let z = (mean - f_best) / sigma;
    (mean - f_best) * normal.cdf(z) + sigma * normal.pdf(z)
}

/// Expected improvement of each candidate (parallel over candidates).
pub fn score_candidates(gp: &Surrogate, candidates: &[Vec<f64>], f_best: f64) -> Vec<f64> {
    par::map_collect(candidates, |c| {
        let (mean, var) = gp.posterior(c).unwrap_or((f64::NEG_INFINITY, 0.0));
        expected_improvement(mean, var, f_best)
    })
}

/// Sequential reference path for the benchmark suite.
pub fn score_candidates_seq(gp: &Surrogate, candidates: &[Vec<f64>], f_best: f64) -> Vec<f64> {
    par::map_collect_seq(candidates, |c| {
        let (mean, var) = gp.posterior(c).unwrap_or((f64::NEG_INFINITY, 0.0));
        expected_improvement(mean, var, f_best)
    })
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Propose `q` unit points maximizing expected improvement over a scrambled
/// low-discrepancy cloud inside the region intersected with the unit box.
/// Candidates within `dedupe_tol` of history are skipped; if every
/// candidate is a duplicate the maximum-variance candidate is returned.
pub fn propose_batch(
    gp: &Surrogate,
    tr: &TrustRegion,
    q: usize,
    history_units: &[Vec<f64>],
    f_best: f64,
    n_candidates: usize,
    dedupe_tol: f64,
    rng: &mut ChaCha12Rng,
) -> Vec<Vec<f64>> {
    let dims = tr.center.len();
    let cloud = scrambled_halton(rng, n_candidates, dims);
    let candidates: Vec<Vec<f64>> = cloud
        .into_iter()
        .map(|u| {
            u.iter()
                .enumerate()
                .map(|(d, x)| {
                    let lo = (tr.center[d] - tr.radius).max(0.0);
                    let hi = (tr.center[d] + tr.radius).min(1.0);
                    lo + x * (hi - lo)
                })
                .collect()
        })
        .collect();

    let ei = score_candidates(gp, &candidates, f_best);
    let fresh: Vec<bool> = par::map_collect(&candidates, |c| {
        history_units.iter().all(|h| linf(h, c) > dedupe_tol)
    });

    let mut picked: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut available: Vec<usize> = (0..candidates.len()).filter(|&i| fresh[i]).collect();
    while picked.len() < q {
        let choice = available
            .iter()
            .copied()
            .filter(|&i| {
                picked
                    .iter()
                    .all(|p| linf(p, &candidates[i]) > dedupe_tol)
            })
            .max_by(|&a, &b| {
                ei[a]
                    .partial_cmp(&ei[b])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.cmp(&a)) // deterministic tie-break: lowest index
            });
        match choice {
            Some(idx) => {
                picked.push(candidates[idx].clone());
                available.retain(|&i| i != idx);
            }
            None => {
                // Everything duplicates history: fall back to the
                // maximum-variance candidate.
                let idx = (0..candidates.len())
                    .max_by(|&a, &b| {
                        let va = gp.posterior(&candidates[a]).map(|p| p.1).unwrap_or(0.0);
                        let vb = gp.posterior(&candidates[b]).map(|p| p.1).unwrap_or(0.0);
                        va.partial_cmp(&vb)
                            .unwrap_or(std::cmp::Ordering::Equal)
                            .then(b.cmp(&a))
                    })
                    .expect("non-empty cloud");
                picked.push(candidates[idx].clone());
            }
        }
    }
    picked
}

// ---------------------------------------------------------------------------
// Intervention

#[derive(Debug, Deserialize)]
struct InterventionResponse {
    #[serde(default)]
    center: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    center_delta: Option<BTreeMap<String, f64>>,
    radius: f64,
}

pub struct Intervention {
    pub center: Vec<f64>,
    pub radius: f64,
    pub from_advisor: bool,
}

struct LoopState<'a> {
    space: &'a DesignSpace,
    spec: &'a SpecSet,
    history: Vec<HistoryEntry>,
    incumbent_fom: f64,
    incumbent_unit: Vec<f64>,
    rng: ChaCha12Rng,
    transcript: Transcript,
    warnings: Vec<String>,
}

/// Ask the advisor for a new center and radius; fall back to a
/// deterministic restart (best point outside the current region, or a
/// fresh sample when none exists, at half the maximum radius).
fn intervene(
    state: &mut LoopState,
    tr: &TrustRegion,
    hierarchy: Option<&Hierarchy>,
    advisor: Option<&dyn Advisor>,
    iteration: u64,
) -> Intervention {
    if let Some(advisor) = advisor {
        let mut request = AdvisorRequest::new(
            "intervene",
            iteration as u32,
            "The optimizer has stagnated. Given the circuit hierarchy, the incumbent's \
             per-metric scores, and the history digest, reply with a new trust-region \
             center (absolute values, or per-variable deltas under `center_delta`) and \
             a radius in normalized [0,1] coordinates.",
        );
        if let Some(h) = hierarchy {
            request.context.hierarchy_json = serde_json::to_value(h).expect("hierarchy");
        }
        let mut by_fom: Vec<&HistoryEntry> = state.history.iter().collect();
        by_fom.sort_by(|a, b| {
            b.fom
                .partial_cmp(&a.fom)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let digest = |entries: &[&HistoryEntry]| -> Vec<serde_json::Value> {
            entries
                .iter()
                .map(|e| json!({"point": e.point, "fom": e.fom}))
                .collect()
        };
        let top: Vec<&HistoryEntry> = by_fom.iter().take(5).copied().collect();
        let bottom: Vec<&HistoryEntry> = by_fom.iter().rev().take(5).copied().collect();
        let incumbent = &state.history[state
            .history
            .iter()
            .position(|e| e.fom == state.incumbent_fom)
            .unwrap_or(0)];
        request.context.extra = json!({
            "incumbent": {"point": incumbent.point, "fom": incumbent.fom,
                          "scores": incumbent.scores},
            "history_top": digest(&top),
            "history_bottom": digest(&bottom),
            "trust_region": {"center": state.space.expand(&tr.center), "radius": tr.radius},
            "design_space": state.space.vars(),
        });
        request.response_schema = json!({
            "type": "object",
            "properties": {
                "center": {"type": "object", "additionalProperties": {"type": "number"}},
                "center_delta": {"type": "object", "additionalProperties": {"type": "number"}},
                "radius": {"type": "number"}
            },
            "required": ["radius"]
        });

        let parsed = call_with_repair(advisor, &request, 1, &mut state.transcript, |v| {
            serde_json::from_value::<InterventionResponse>(v.clone()).map_err(|e| {
                crate::advisor::AdvisorError::Malformed {
                    round: iteration as u32,
                    detail: e.to_string(),
                }
            })
        });
        match parsed {
            Ok(response) => {
                let mut raw = state.space.expand(&state.incumbent_unit);
                if let Some(center) = response.center {
                    let mut center = center;
                    state.space.fold_derived(&mut center);
                    for (name, value) in center {
                        if raw.contains_key(&name) {
                            raw.insert(name, value);
                        } else {
                            log::warn!("intervention names unknown variable `{name}`; ignored");
                        }
                    }
                }
                if let Some(delta) = response.center_delta {
                    let mut delta = delta;
                    state.space.fold_derived(&mut delta);
                    for (name, d) in delta {
                        if let Some(v) = raw.get_mut(&name) {
                            *v += d;
                        }
                    }
                }
                // to_unit clamps into [0,1]; the radius clips into its band.
                let center = state
                    .space
                    .to_unit(&raw)
                    .unwrap_or_else(|_| state.incumbent_unit.clone());
                return Intervention {
                    center,
                    radius: response.radius.clamp(tr.r_min, tr.r_max),
                    from_advisor: true,
                };
            }
            Err(err) => {
                state
                    .warnings
                    .push(format!("advisor intervention failed ({err}); fallback restart"));
            }
        }
    }

    // Deterministic restart: best history point outside the current region.
    let outside = state
        .history
        .iter()
        .filter(|e| linf(&e.unit, &tr.center) > tr.radius)
        .max_by(|a, b| {
            a.fom
                .partial_cmp(&b.fom)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    let center = match outside {
        Some(entry) => entry.unit.clone(),
        None => latin_hypercube(&mut state.rng, 1, tr.center.len())
            .pop()
            .expect("one sample"),
    };
    Intervention {
        center,
        radius: tr.r_max / 2.0,
        from_advisor: false,
    }
}

// ---------------------------------------------------------------------------
// The optimization loop

struct Region {
    tr: TrustRegion,
    best_fom: f64,
    no_imp: u32,
}

/// Run hybrid initial sampling followed by the trust-region loop.
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    space: &DesignSpace,
    spec: &SpecSet,
    evaluator: &dyn Evaluator,
    advisor: Option<&dyn Advisor>,
    hierarchy: Option<&Hierarchy>,
    cfg: &OptConfig,
) -> Result<OptReport, OptError> {
    cfg.validate()?;
    spec.validate()?;
    let started = std::time::Instant::now();
    let score_cfg = ScoreConfig {
        failure_penalty: cfg.failure_penalty,
    };
    let counter = AtomicU64::new(0);
    let n_init = cfg.n_init.unwrap_or(2 * space.free_dim()).max(2);

    let mut state = LoopState {
        space,
        spec,
        history: Vec::new(),
        incumbent_fom: f64::NEG_INFINITY,
        incumbent_unit: vec![0.5; space.free_dim()],
        rng: ChaCha12Rng::seed_from_u64(cfg.seed),
        transcript: Transcript::default(),
        warnings: Vec::new(),
    };

    // Initial sampling (Latin hypercube split across the pruned box and its
    // complement), evaluated before the loop.
    let init = initial_sample(space, n_init, cfg.alpha, &mut state.rng)?;
    state.warnings.extend(init.warnings);
    let mut feasible_hit = false;
    for (point, unit) in init.points.iter().zip(&init.unit) {
        let entry = run_point(&mut state, point, unit, 0, evaluator, &counter, cfg, &score_cfg)?;
        feasible_hit |= entry;
        if feasible_hit && cfg.mode == ScoreMode::Feasibility {
            break;
        }
    }

    let mut trace: Vec<IterationTrace> = Vec::new();
    let mut regions: Vec<Region> = (0..cfg.regions)
        .map(|_| Region {
            tr: TrustRegion {
                center: state.incumbent_unit.clone(),
                radius: cfg.r_init.clamp(cfg.r_min, cfg.r_max),
                r_min: cfg.r_min,
                r_max: cfg.r_max,
                alpha_inc: cfg.alpha_inc,
                alpha_dec: cfg.alpha_dec,
            },
            best_fom: state.incumbent_fom,
            no_imp: 0,
        })
        .collect();
    let mut warm: Option<GpParams> = None;

    if !(feasible_hit && cfg.mode == ScoreMode::Feasibility) {
        'outer: for t in 0..cfg.n_iter {
            let iteration = (t + 1) as u64;
            let region_idx = t % cfg.regions;

            // Refit the surrogate on the most recent window.
            let window: Vec<&HistoryEntry> = state
                .history
                .iter()
                .rev()
                .take(cfg.max_gp_points)
                .collect();
            let xs: Vec<Vec<f64>> = window.iter().rev().map(|e| e.unit.clone()).collect();
            let ys: Vec<f64> = window.iter().rev().map(|e| e.fom).collect();
            let gp = match fit_surrogate(&xs, &ys, warm, &GpConfig::default()) {
                Ok(gp) => {
                    warm = Some(gp.params());
                    Some(gp)
                }
                Err(err) => {
                    log::warn!("surrogate fit failed at iteration {iteration}: {err}");
                    None
                }
            };

            let region = &mut regions[region_idx];
            let radius_before = region.tr.radius;
            let history_units: Vec<Vec<f64>> =
                state.history.iter().map(|e| e.unit.clone()).collect();
            let proposals = match &gp {
                Some(gp) => propose_batch(
                    gp,
                    &region.tr,
                    cfg.batch,
                    &history_units,
                    region.best_fom,
                    cfg.candidates,
                    cfg.dedupe_tol,
                    &mut state.rng,
                ),
                None => {
                    // No usable surrogate: random points inside the region.
                    let cloud = scrambled_halton(&mut state.rng, cfg.batch, space.free_dim());
                    cloud
                        .into_iter()
                        .map(|u| {
                            u.iter()
                                .enumerate()
                                .map(|(d, x)| {
                                    let lo = (region.tr.center[d] - region.tr.radius).max(0.0);
                                    let hi = (region.tr.center[d] + region.tr.radius).min(1.0);
                                    lo + x * (hi - lo)
                                })
                                .collect()
                        })
                        .collect()
                }
            };

            let mut batch_best = f64::NEG_INFINITY;
            let mut batch_best_unit: Option<Vec<f64>> = None;
            for unit in &proposals {
                let point = DesignPoint {
                    values: space.expand(unit),
                    provenance: Provenance::TrustRegion,
                };
                let feasible =
                    run_point(&mut state, &point, unit, iteration, evaluator, &counter, cfg, &score_cfg)?;
                let fom_new = state.history.last().expect("entry").fom;
                if fom_new > batch_best {
                    batch_best = fom_new;
                    batch_best_unit = Some(unit.clone());
                }
                if feasible && cfg.mode == ScoreMode::Feasibility {
                    feasible_hit = true;
                }
            }

            let region = &mut regions[region_idx];
            let improved = batch_best > region.best_fom;
            if improved {
                region.best_fom = batch_best;
                if let Some(unit) = batch_best_unit {
                    region.tr.center = unit;
                }
                region.no_imp = 0;
            } else {
                region.no_imp += 1;
            }
            update_trust_region(&mut region.tr, improved);
            let mut intervened = false;
            if region.no_imp >= cfg.stagnation_k {
                let tr_snapshot = region.tr.clone();
                let intervention =
                    intervene(&mut state, &tr_snapshot, hierarchy, advisor, iteration);
                let region = &mut regions[region_idx];
                region.tr.center = intervention.center;
                region.tr.radius = intervention.radius;
                region.no_imp = 0;
                intervened = true;
            }

            let region = &regions[region_idx];
            trace.push(IterationTrace {
                iteration,
                region: region_idx,
                radius_before,
                radius_after: region.tr.radius,
                improved,
                no_imp_after: region.no_imp,
                incumbent_fom: state.incumbent_fom,
                intervened,
            });

            if feasible_hit && cfg.mode == ScoreMode::Feasibility {
                break 'outer;
            }
        }
    }

    let evaluations = counter.load(Ordering::SeqCst);
    debug_assert!(evaluations <= (n_init + cfg.n_iter * cfg.batch) as u64);
    let samples_to_feasible = state
        .history
        .iter()
        .find(|e| e.fom >= 0.0 && cfg.mode == ScoreMode::Feasibility)
        .map(|e| e.eval_index);
    let best = state
        .history
        .iter()
        .max_by(|a, b| {
            a.fom
                .partial_cmp(&b.fom)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("at least one evaluation");
    let status = match (cfg.mode, samples_to_feasible) {
        (ScoreMode::Feasibility, Some(_)) => RunStatus::Feasible,
        (ScoreMode::Feasibility, None) => RunStatus::BudgetExhausted,
        (ScoreMode::SingleObjective, _) => RunStatus::Completed,
    };

    Ok(OptReport {
        seed: cfg.seed,
        evaluator_id: evaluator.id().to_string(),
        mode: cfg.mode,
        status,
        best: BestEntry {
            point: best.point.clone(),
            fom: best.fom,
            scores: best.scores.clone(),
            measurement: best.measurement.clone(),
        },
        evaluations,
        advisor_calls: state.transcript.call_count(),
        samples_to_feasible,
        history: state.history,
        trace,
        warnings: state.warnings,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Evaluate one point, score it, and append to history; returns whether the
/// point is feasible (FoM = 0 in feasibility terms).
#[allow(clippy::too_many_arguments)]
fn run_point(
    state: &mut LoopState,
    point: &DesignPoint,
    unit: &[f64],
    iteration: u64,
    evaluator: &dyn Evaluator,
    counter: &AtomicU64,
    cfg: &OptConfig,
    score_cfg: &ScoreConfig,
) -> Result<bool, OptError> {
    let measurement = match evaluate(point, evaluator, counter) {
        Ok(result) => result.measurement,
        Err(crate::eval::EvalError::OutOfBounds(msg)) => {
            return Err(crate::eval::EvalError::OutOfBounds(msg).into())
        }
        Err(err) => {
            state.warnings.push(format!("evaluation failed: {err}"));
            Measurement::all_failed(&evaluator.metric_names())
        }
    };
    let sv = fom(state.spec, &measurement, cfg.mode, score_cfg)?;
    let entry = HistoryEntry {
        eval_index: counter.load(Ordering::SeqCst),
        iteration,
        point: point.values.clone(),
        unit: unit.to_vec(),
        measurement,
        scores: sv.r.clone(),
        fom: sv.fom,
        provenance: point.provenance,
    };
    if sv.fom > state.incumbent_fom {
        state.incumbent_fom = sv.fom;
        state.incumbent_unit = unit.to_vec();
    }
    let feasible = sv.r.iter().all(|(_, ri)| *ri >= 0.0);
    state.history.push(entry);
    Ok(feasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{Direction, MetricSpec};
    use crate::space::{Scale, VarSpec};

    /// Affine-in-y figure of merit: a single always-positive target metric
    /// with a large negative constraint makes FoM = 1 + y/1e6.
    fn affine_spec() -> SpecSet {
        SpecSet {
            metrics: vec![MetricSpec {
                name: "y".into(),
                constraint: -1e6,
                direction: Direction::Max,
                unit: String::new(),
                target: true,
            }],
        }
    }

    fn unit_space(dims: usize) -> DesignSpace {
        DesignSpace::new(
            (0..dims)
                .map(|i| VarSpec {
                    name: format!("x{i}"),
                    lower: 0.0,
                    upper: 1.0,
                    scale: Scale::Linear,
                })
                .collect(),
        )
        .unwrap()
    }

    /// Evaluator computing y = f(x) over the unit box.
    struct FnEvaluator {
        space: DesignSpace,
        f: fn(&[f64]) -> f64,
    }

    impl FnEvaluator {
        fn new(dims: usize, f: fn(&[f64]) -> f64) -> FnEvaluator {
            FnEvaluator {
                space: unit_space(dims),
                f,
            }
        }
    }

    impl Evaluator for FnEvaluator {
        fn id(&self) -> &str {
            "scripted"
        }
        fn space(&self) -> &DesignSpace {
            &self.space
        }
        fn metric_names(&self) -> Vec<String> {
            vec!["y".into()]
        }
        fn run(&self, values: &BTreeMap<String, f64>) -> Result<Measurement, crate::eval::EvalError> {
            let mut x: Vec<(String, f64)> = values.clone().into_iter().collect();
            x.sort_by(|a, b| {
                let ka: usize = a.0[1..].parse().unwrap();
                let kb: usize = b.0[1..].parse().unwrap();
                ka.cmp(&kb)
            });
            let xs: Vec<f64> = x.into_iter().map(|(_, v)| v).collect();
            let y = (self.f)(&xs);
            Ok(Measurement::from_values(BTreeMap::from([("y".into(), y)])))
        }
    }

    fn single_cfg(seed: u64, n_iter: usize) -> OptConfig {
        OptConfig {
            n_iter,
            seed,
            mode: ScoreMode::SingleObjective,
            candidates: 400,
            ..OptConfig::default()
        }
    }

    #[test]
    fn radius_update_rule_and_clipping() {
        let mut tr = TrustRegion {
            center: vec![0.5],
            radius: 0.2,
            r_min: 0.015625,
            r_max: 0.8,
            alpha_inc: 1.5,
            alpha_dec: 0.75,
        };
        update_trust_region(&mut tr, true);
        assert!((tr.radius - 0.3).abs() < 1e-15);
        tr.radius = 0.8;
        update_trust_region(&mut tr, true);
        assert_eq!(tr.radius, 0.8);
        tr.radius = 0.015625;
        update_trust_region(&mut tr, false);
        assert_eq!(tr.radius, 0.015625);
    }

    #[test]
    fn n_iter_zero_runs_exactly_the_initial_samples() {
        let eval = FnEvaluator::new(2, |x| x[0] + x[1]);
        let cfg = OptConfig {
            n_init: Some(6),
            ..single_cfg(3, 0)
        };
        let report = optimize(&eval.space, &affine_spec(), &eval, None, None, &cfg).unwrap();
        assert_eq!(report.evaluations, 6);
        assert!(report.trace.is_empty());
    }

    #[test]
    fn incumbent_is_monotone_and_budget_respected() {
        let eval = FnEvaluator::new(2, |x| {
            -((x[0] - 0.3).powi(2) + (x[1] - 0.7).powi(2))
        });
        let cfg = single_cfg(5, 15);
        let report = optimize(&eval.space, &affine_spec(), &eval, None, None, &cfg).unwrap();
        let mut best = f64::NEG_INFINITY;
        for t in &report.trace {
            assert!(t.incumbent_fom >= best);
            best = t.incumbent_fom;
            assert!(t.radius_after >= cfg.r_min && t.radius_after <= cfg.r_max);
        }
        assert!(report.evaluations <= (4 + 15) as u64);
    }

    #[test]
    fn intervention_triggers_exactly_at_k() {
        // Constant objective: never improves after the first incumbent.
        let eval = FnEvaluator::new(2, |_| -5.0);
        let cfg = OptConfig {
            stagnation_k: 4,
            n_init: Some(4),
            ..single_cfg(7, 11)
        };
        let report = optimize(&eval.space, &affine_spec(), &eval, None, None, &cfg).unwrap();
        let interventions: Vec<u64> = report
            .trace
            .iter()
            .filter(|t| t.intervened)
            .map(|t| t.iteration)
            .collect();
        // no_imp reaches 4 at iterations 4 and 8 (reset after each).
        assert_eq!(interventions, vec![4, 8]);
        for t in &report.trace {
            assert!(t.no_imp_after < cfg.stagnation_k);
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let eval = FnEvaluator::new(3, |x| -(x[0] - 0.4).powi(2) - x[1] * 0.1 + x[2] * 0.05);
        let cfg = single_cfg(42, 10);
        let a = optimize(&eval.space, &affine_spec(), &eval, None, None, &cfg).unwrap();
        let b = optimize(&eval.space, &affine_spec(), &eval, None, None, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn feasibility_mode_stops_early_without_entering_loop() {
        // Feasible iff y <= 0.25; certain to occur among the init samples.
        let spec = SpecSet {
            metrics: vec![MetricSpec {
                name: "y".into(),
                constraint: 0.25,
                direction: Direction::Min,
                unit: String::new(),
                target: false,
            }],
        };
        let eval = FnEvaluator::new(1, |x| x[0]);
        let cfg = OptConfig {
            n_init: Some(8),
            n_iter: 50,
            seed: 2,
            candidates: 200,
            ..OptConfig::default()
        };
        let report = optimize(&eval.space, &spec, &eval, None, None, &cfg).unwrap();
        assert_eq!(report.status, RunStatus::Feasible);
        assert!(report.trace.is_empty(), "loop must not be entered");
        assert!(report.samples_to_feasible.unwrap() <= 8);
        // Evaluation stops at the first feasible point.
        assert_eq!(
            report.samples_to_feasible.unwrap(),
            report.evaluations
        );
    }

    #[test]
    fn proposals_improve_a_quadratic_from_inside_the_region() {
        // Monte-Carlo harness: with the optimum inside the region, the
        // proposal strictly improves the incumbent in >= 90% of seeds.
        let mut improved = 0;
        for seed in 0..20u64 {
            let f = |x: &[f64]| -((x[0] - 0.55).powi(2) + (x[1] - 0.45).powi(2));
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let grid: Vec<Vec<f64>> = latin_hypercube(&mut rng, 12, 2);
            let ys: Vec<f64> = grid.iter().map(|p| f(p)).collect();
            let gp = fit_surrogate(&grid, &ys, None, &GpConfig::default()).unwrap();
            let best_idx = (0..ys.len())
                .max_by(|&a, &b| ys[a].partial_cmp(&ys[b]).unwrap())
                .unwrap();
            let tr = TrustRegion {
                center: grid[best_idx].clone(),
                radius: 0.4,
                r_min: 0.01,
                r_max: 0.8,
                alpha_inc: 1.5,
                alpha_dec: 0.75,
            };
            let proposal = propose_batch(&gp, &tr, 1, &grid, ys[best_idx], 500, 1e-9, &mut rng);
            if f(&proposal[0]) > ys[best_idx] {
                improved += 1;
            }
        }
        assert!(improved >= 18, "only {improved}/20 improved");
    }

    #[test]
    fn proposals_respect_the_unit_box_when_region_overflows() {
        let x = vec![vec![0.05, 0.9], vec![0.1, 0.95], vec![0.2, 0.85]];
        let y = vec![0.1, 0.3, 0.2];
        let gp = fit_surrogate(&x, &y, None, &GpConfig::default()).unwrap();
        let tr = TrustRegion {
            center: vec![0.05, 0.95],
            radius: 0.5,
            r_min: 0.01,
            r_max: 0.8,
            alpha_inc: 1.5,
            alpha_dec: 0.75,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let proposals = propose_batch(&gp, &tr, 4, &x, 0.3, 300, 1e-9, &mut rng);
        for p in proposals {
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn duplicate_cloud_falls_back_to_max_variance() {
        let x = vec![vec![0.5], vec![0.6]];
        let y = vec![0.0, 1.0];
        let gp = fit_surrogate(&x, &y, None, &GpConfig::default()).unwrap();
        let tr = TrustRegion {
            center: vec![0.55],
            radius: 0.2,
            r_min: 0.01,
            r_max: 0.8,
            alpha_inc: 1.5,
            alpha_dec: 0.75,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        // dedupe_tol so large everything is a "duplicate" of history
        let proposals = propose_batch(&gp, &tr, 1, &x, 1.0, 50, 10.0, &mut rng);
        assert_eq!(proposals.len(), 1);
    }

    #[test]
    fn scripted_intervention_replaces_center_and_radius() {
        use crate::advisor::ScriptedAdvisor;
        let eval = FnEvaluator::new(2, |_| -5.0);
        let fixture = serde_json::json!({
            "version": 1,
            "entries": [{
                "match": {"purpose": "intervene"},
                "response": {"center": {"x0": 0.25, "x1": 0.75}, "radius": 9.0}
            }]
        });
        let advisor = ScriptedAdvisor::from_json("t", &fixture.to_string()).unwrap();
        let cfg = OptConfig {
            stagnation_k: 3,
            n_init: Some(4),
            ..single_cfg(11, 4)
        };
        let report =
            optimize(&eval.space, &affine_spec(), &eval, Some(&advisor), None, &cfg).unwrap();
        let t = report.trace.iter().find(|t| t.intervened).unwrap();
        // radius 9.0 clips to r_max
        assert_eq!(t.radius_after, cfg.r_max);
        assert_eq!(report.advisor_calls, 1);
        assert_eq!(t.no_imp_after, 0);
    }

    #[test]
    fn unreachable_advisor_falls_back_and_run_continues() {
        use crate::advisor::ScriptedAdvisor;
        let eval = FnEvaluator::new(2, |_| -5.0);
        // Fixture with no intervene entry: advisor unavailable for it.
        let fixture = serde_json::json!({"version": 1, "entries": []});
        let advisor = ScriptedAdvisor::from_json("t", &fixture.to_string()).unwrap();
        let cfg = OptConfig {
            stagnation_k: 3,
            n_init: Some(4),
            ..single_cfg(13, 5)
        };
        let report =
            optimize(&eval.space, &affine_spec(), &eval, Some(&advisor), None, &cfg).unwrap();
        assert!(report.trace.iter().any(|t| t.intervened));
        assert!(!report.warnings.is_empty());
        let t = report.trace.iter().find(|t| t.intervened).unwrap();
        assert_eq!(t.radius_after, cfg.r_max / 2.0);
    }

    #[test]
    fn multi_region_mode_runs_within_budget() {
        let eval = FnEvaluator::new(2, |x| -(x[0] - 0.2).powi(2) - (x[1] - 0.8).powi(2));
        let cfg = OptConfig {
            regions: 2,
            ..single_cfg(17, 8)
        };
        let report = optimize(&eval.space, &affine_spec(), &eval, None, None, &cfg).unwrap();
        assert!(report.evaluations <= (4 + 8) as u64);
        assert!(report.trace.iter().any(|t| t.region == 1));
    }
}
