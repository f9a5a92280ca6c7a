//! Normalized per-metric scores and figures of merit.
//!
//! Each metric scores as `r_i = phi_i * (F_i - C_i) / max(|F_i|, |C_i|)`,
//! positive when the spec is exceeded. Feasibility mode sums only the
//! violations, so the optimum is exactly zero; single-objective mode adds
//! the target metric's reward only once every non-target constraint is
//! satisfied, otherwise the target is also penalized.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("non-finite input for metric `{0}`")]
    NonFiniteInput(String),
    #[error("measurement is missing metric `{0}`")]
    MissingMetric(String),
    #[error("spec set is invalid: {0}")]
    InvalidSpec(String),
    #[error("single-objective scoring requires a target metric")]
    NoTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Max,
    Min,
}

impl Direction {
    pub fn phi(self) -> f64 {
        match self {
            Direction::Max => 1.0,
            Direction::Min => -1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    /// Specification value in the evaluator's declared unit (SI base, or dB
    /// for dB-valued metrics).
    pub constraint: f64,
    pub direction: Direction,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub target: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecSet {
    pub metrics: Vec<MetricSpec>,
}

impl SpecSet {
    pub fn from_json(json: &str) -> Result<SpecSet, ScoreError> {
        let spec: SpecSet =
            serde_json::from_str(json).map_err(|e| ScoreError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.metrics.is_empty() {
            return Err(ScoreError::InvalidSpec("no metrics".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.metrics {
            if !names.insert(&m.name) {
                return Err(ScoreError::InvalidSpec(format!(
                    "duplicate metric `{}`",
                    m.name
                )));
            }
        }
        if self.metrics.iter().filter(|m| m.target).count() > 1 {
            return Err(ScoreError::InvalidSpec("more than one target metric".into()));
        }
        Ok(())
    }

    pub fn target_index(&self) -> Option<usize> {
        self.metrics.iter().position(|m| m.target)
    }

    /// Retarget for `single:<metric>` mode; clears any previous target.
    pub fn with_target(mut self, name: &str) -> Result<SpecSet, ScoreError> {
        let mut found = false;
        for m in &mut self.metrics {
            m.target = m.name == name;
            found |= m.target;
        }
        if !found {
            return Err(ScoreError::MissingMetric(name.to_string()));
        }
        Ok(self)
    }

    pub fn names(&self) -> Vec<String> {
        self.metrics.iter().map(|m| m.name.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricValue {
    Value(f64),
    Failed,
}

/// Simulated metric vector, possibly with per-metric failure status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub values: BTreeMap<String, MetricValue>,
}

impl Measurement {
    pub fn from_values(values: BTreeMap<String, f64>) -> Measurement {
        Measurement {
            values: values
                .into_iter()
                .map(|(k, v)| (k, MetricValue::Value(v)))
                .collect(),
        }
    }

    pub fn all_failed(names: &[String]) -> Measurement {
        Measurement {
            values: names
                .iter()
                .map(|n| (n.clone(), MetricValue::Failed))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    Feasibility,
    SingleObjective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    /// Per-metric normalized scores, in spec order.
    pub r: Vec<(String, f64)>,
    pub fom: f64,
    pub mode: ScoreMode,
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreConfig {
    /// Score assigned to a metric whose simulation failed.
    pub failure_penalty: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            failure_penalty: 1.0,
        }
    }
}

/// Normalized score of one metric. Both values at exactly zero count as
/// on-spec (the limit along F -> C).
pub fn score_metric(f: f64, c: f64, phi: f64) -> Result<f64, ScoreError> {
    if !f.is_finite() || !c.is_finite() {
        return Err(ScoreError::NonFiniteInput(format!("F={f}, C={c}")));
    }
    let denom = f.abs().max(c.abs());
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(phi * (f - c) / denom)
}

fn scores(
    spec: &SpecSet,
    meas: &Measurement,
    cfg: &ScoreConfig,
) -> Result<Vec<(String, f64)>, ScoreError> {
    spec.metrics
        .iter()
        .map(|m| {
            let value = meas
                .values
                .get(&m.name)
                .ok_or_else(|| ScoreError::MissingMetric(m.name.clone()))?;
            let r = match value {
                MetricValue::Value(f) => score_metric(*f, m.constraint, m.direction.phi())?,
                MetricValue::Failed => -cfg.failure_penalty,
            };
            Ok((m.name.clone(), r))
        })
        .collect()
}

/// Feasibility figure of merit: the sum of violations; zero iff all
/// constraints are satisfied.
pub fn fom_feasibility(
    spec: &SpecSet,
    meas: &Measurement,
    cfg: &ScoreConfig,
) -> Result<ScoreVector, ScoreError> {
    let r = scores(spec, meas, cfg)?;
    let fom = r.iter().map(|(_, ri)| ri.min(0.0)).sum();
    Ok(ScoreVector {
        r,
        fom,
        mode: ScoreMode::Feasibility,
    })
}

/// Single-objective figure of merit: non-target violations plus the target
/// reward, which is gated on all non-target constraints being satisfied.
pub fn fom_single(
    spec: &SpecSet,
    meas: &Measurement,
    cfg: &ScoreConfig,
) -> Result<ScoreVector, ScoreError> {
    let t = spec.target_index().ok_or(ScoreError::NoTarget)?;
    let r = scores(spec, meas, cfg)?;
    let non_target: f64 = r
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != t)
        .map(|(_, (_, ri))| ri.min(0.0))
        .sum();
    let all_ok = r
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != t)
        .all(|(_, (_, ri))| *ri >= 0.0);
    let r_t = r[t].1;
    let target = if all_ok { r_t } else { r_t.min(0.0) };
    Ok(ScoreVector {
        r,
        fom: non_target + target,
        mode: ScoreMode::SingleObjective,
    })
}

/// Score under the given mode.
pub fn fom(
    spec: &SpecSet,
    meas: &Measurement,
    mode: ScoreMode,
    cfg: &ScoreConfig,
) -> Result<ScoreVector, ScoreError> {
    match mode {
        ScoreMode::Feasibility => fom_feasibility(spec, meas, cfg),
        ScoreMode::SingleObjective => fom_single(spec, meas, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec3(target: Option<usize>) -> SpecSet {
        SpecSet {
            metrics: (0..3)
                .map(|i| MetricSpec {
                    name: format!("m{i}"),
                    constraint: 10.0,
                    direction: Direction::Max,
                    unit: String::new(),
                    target: target == Some(i),
                })
                .collect(),
        }
    }

    fn meas(values: &[(&str, f64)]) -> Measurement {
        Measurement::from_values(
            values
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
        )
    }

    #[test]
    fn score_metric_matches_hand_computed_values() {
        // (50 - 40) / max(50, 40) = 0.2
        assert_eq!(score_metric(50.0, 40.0, 1.0).unwrap(), 0.2);
        // minimize: -(0.6 - 0.5) / 0.6 = -1/6
        let r = score_metric(0.6e-3, 0.5e-3, -1.0).unwrap();
        assert!((r - (-1.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn at_spec_scores_zero() {
        for (f, phi) in [(5.0, 1.0), (-3.0, -1.0), (0.0, 1.0)] {
            assert_eq!(score_metric(f, f, phi).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_denominator_scores_zero() {
        assert_eq!(score_metric(0.0, 0.0, -1.0).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        assert!(score_metric(f64::NAN, 1.0, 1.0).is_err());
        assert!(score_metric(1.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn feasibility_fom_is_zero_when_all_satisfied() {
        let spec = spec3(None);
        let sv = fom_feasibility(
            &spec,
            &meas(&[("m0", 12.0), ("m1", 10.0), ("m2", 50.0)]),
            &ScoreConfig::default(),
        )
        .unwrap();
        assert_eq!(sv.fom, 0.0);
    }

    #[test]
    fn feasibility_fom_sums_negative_parts() {
        // r = (0.2, -0.1, -0.3) -> FoM = -0.4 using constraint-relative
        // measurements chosen to hit those scores exactly.
        let spec = spec3(None);
        let sv = fom_feasibility(
            &spec,
            &meas(&[("m0", 12.5), ("m1", 9.0), ("m2", 7.0)]),
            &ScoreConfig::default(),
        )
        .unwrap();
        assert!((sv.r[0].1 - 0.2).abs() < 1e-15);
        assert!((sv.r[1].1 + 0.1).abs() < 1e-15);
        assert!((sv.r[2].1 + 0.3).abs() < 1e-15);
        assert!((sv.fom + 0.4).abs() < 1e-15);
    }

    #[test]
    fn failed_metric_contributes_penalty() {
        let spec = spec3(None);
        let mut m = meas(&[("m0", 12.0), ("m1", 10.0)]);
        m.values.insert("m2".into(), MetricValue::Failed);
        let sv = fom_feasibility(&spec, &m, &ScoreConfig::default()).unwrap();
        assert_eq!(sv.fom, -1.0);
    }

    #[test]
    fn missing_metric_is_an_error() {
        let spec = spec3(None);
        let err = fom_feasibility(
            &spec,
            &meas(&[("m0", 12.0)]),
            &ScoreConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ScoreError::MissingMetric(name) if name == "m1"));
    }

    #[test]
    fn single_objective_rewards_target_when_feasible() {
        let spec = spec3(Some(2));
        let sv = fom_single(
            &spec,
            &meas(&[("m0", 12.0), ("m1", 11.0), ("m2", 10.0 / 0.65)]),
            &ScoreConfig::default(),
        )
        .unwrap();
        assert!((sv.fom - 0.35).abs() < 1e-12);
    }

    #[test]
    fn single_objective_suppresses_reward_when_infeasible() {
        let spec = spec3(Some(2));
        // m1 violated at -0.2, target positive: reward suppressed.
        let sv = fom_single(
            &spec,
            &meas(&[("m0", 12.0), ("m1", 8.0), ("m2", 10.0 / 0.65)]),
            &ScoreConfig::default(),
        )
        .unwrap();
        assert!((sv.fom + 0.2).abs() < 1e-12);
    }

    #[test]
    fn single_objective_penalizes_both() {
        let spec = spec3(Some(2));
        let sv = fom_single(
            &spec,
            &meas(&[("m0", 12.0), ("m1", 8.0), ("m2", 9.0)]),
            &ScoreConfig::default(),
        )
        .unwrap();
        assert!((sv.fom + 0.3).abs() < 1e-12);
    }

    #[test]
    fn spec_with_duplicate_names_is_invalid() {
        let mut spec = spec3(None);
        spec.metrics[1].name = "m0".into();
        assert!(spec.validate().is_err());
    }
}
