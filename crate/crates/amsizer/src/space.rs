//! Design space: named bounded variables (linear or log scale), equality and
//! ratio tying groups, an optional pruned sub-box, and pairwise ratio
//! constraints. The optimizer works in unit coordinates over the free
//! (representative) variables; `expand` maps a unit point back to the full
//! raw-variable map, broadcasting tied values.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("variable `{0}`: {1}")]
    BadVariable(String, String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("tying plan invalid: {0}")]
    BadTying(String),
    #[error("pruned box invalid: {0}")]
    BadPruning(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

impl Default for Scale {
    fn default() -> Self {
        Scale::Linear
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub scale: Scale,
}

impl VarSpec {
    fn to_unit(&self, value: f64) -> f64 {
        match self.scale {
            Scale::Linear => (value - self.lower) / (self.upper - self.lower),
            Scale::Log => (value.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln()),
        }
    }

    fn from_unit(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.scale {
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log => (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp(),
        }
    }
}

/// Equality or pairwise-ratio relation across design variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRelation {
    Equal,
    /// Two variables with second = (num/den) * first.
    Ratio {
        num: i64,
        den: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieGroup {
    pub vars: Vec<String>,
    pub relation: TieRelation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TyingPlan {
    pub groups: Vec<TieGroup>,
    pub reduced_dimension: usize,
}

impl TyingPlan {
    pub fn empty(dimension: usize) -> TyingPlan {
        TyingPlan {
            groups: Vec::new(),
            reduced_dimension: dimension,
        }
    }

    /// Groups must be disjoint, reference known variables, and ratio groups
    /// must be positive pairs.
    pub fn validate(&self, known: &[String]) -> Result<(), SpaceError> {
        let mut seen = std::collections::BTreeSet::new();
        for group in &self.groups {
            if group.vars.len() < 2 {
                return Err(SpaceError::BadTying("group with fewer than 2 vars".into()));
            }
            if let TieRelation::Ratio { num, den } = group.relation {
                if group.vars.len() != 2 {
                    return Err(SpaceError::BadTying("ratio groups must be pairs".into()));
                }
                if num <= 0 || den <= 0 {
                    return Err(SpaceError::BadTying("ratio must be positive".into()));
                }
            }
            for var in &group.vars {
                if !known.contains(var) {
                    return Err(SpaceError::UnknownVariable(var.clone()));
                }
                if !seen.insert(var.clone()) {
                    return Err(SpaceError::BadTying(format!(
                        "variable `{var}` appears in more than one group"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn merged_count(&self) -> usize {
        self.groups.iter().map(|g| g.vars.len() - 1).sum()
    }
}

/// A derived variable: value = factor * value(representative).
#[derive(Debug, Clone)]
struct Derived {
    var: usize,
    rep: usize,
    factor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioConstraint {
    pub num: String,
    pub den: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl RatioConstraint {
    pub fn satisfied(&self, values: &BTreeMap<String, f64>) -> bool {
        let (Some(&num), Some(&den)) = (values.get(&self.num), values.get(&self.den)) else {
            return true;
        };
        if den == 0.0 {
            return false;
        }
        let ratio = num / den;
        self.min.map_or(true, |m| ratio >= m) && self.max.map_or(true, |m| ratio <= m)
    }
}

#[derive(Debug, Clone)]
pub struct DesignSpace {
    vars: Vec<VarSpec>,
    index: BTreeMap<String, usize>,
    /// Indices of free (representative) variables, in variable order.
    free: Vec<usize>,
    derived: Vec<Derived>,
    /// Pruned sub-box in unit coordinates of the free variables.
    pruned_unit: Option<Vec<(f64, f64)>>,
    pub ratio_constraints: Vec<RatioConstraint>,
    tying: TyingPlan,
}

impl DesignSpace {
    pub fn new(vars: Vec<VarSpec>) -> Result<DesignSpace, SpaceError> {
        let mut index = BTreeMap::new();
        for (i, var) in vars.iter().enumerate() {
            if !(var.lower.is_finite() && var.upper.is_finite() && var.lower < var.upper) {
                return Err(SpaceError::BadVariable(
                    var.name.clone(),
                    format!("invalid bounds [{}, {}]", var.lower, var.upper),
                ));
            }
            if var.scale == Scale::Log && var.lower <= 0.0 {
                return Err(SpaceError::BadVariable(
                    var.name.clone(),
                    "log scale requires positive bounds".into(),
                ));
            }
            if index.insert(var.name.clone(), i).is_some() {
                return Err(SpaceError::BadVariable(var.name.clone(), "duplicate".into()));
            }
        }
        let free = (0..vars.len()).collect();
        let dim = vars.len();
        Ok(DesignSpace {
            vars,
            index,
            free,
            derived: Vec::new(),
            pruned_unit: None,
            ratio_constraints: Vec::new(),
            tying: TyingPlan::empty(dim),
        })
    }

    pub fn vars(&self) -> &[VarSpec] {
        &self.vars
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.iter().map(|v| v.name.clone()).collect()
    }

    pub fn free_dim(&self) -> usize {
        self.free.len()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.free
            .iter()
            .map(|&i| self.vars[i].name.clone())
            .collect()
    }

    pub fn tying(&self) -> &TyingPlan {
        &self.tying
    }

    /// Apply a tying plan: each group keeps its lexicographically smallest
    /// variable as representative; the representative's bounds become the
    /// intersection of the member bounds mapped through the relation.
    pub fn apply_tying(&self, plan: &TyingPlan) -> Result<DesignSpace, SpaceError> {
        plan.validate(&self.names())?;
        let mut out = self.clone();
        out.derived.clear();
        let mut is_derived = vec![false; out.vars.len()];

        for group in &plan.groups {
            let mut members = group.vars.clone();
            members.sort();
            let rep_name = members[0].clone();
            let rep = out.index[&rep_name];
            // factor of member i relative to representative
            for member in &members[1..] {
                let var = out.index[member];
                let factor = match group.relation {
                    TieRelation::Equal => 1.0,
                    TieRelation::Ratio { num, den } => {
                        // group.vars order defines the pair direction
                        let first = &group.vars[0];
                        let ratio = num as f64 / den as f64;
                        if member == first {
                            1.0 / ratio
                        } else {
                            ratio
                        }
                    }
                };
                // Intersect rep bounds with member bounds / factor.
                let (mlo, mhi) = (out.vars[var].lower / factor, out.vars[var].upper / factor);
                let rep_var = &mut out.vars[rep];
                rep_var.lower = rep_var.lower.max(mlo.min(mhi));
                rep_var.upper = rep_var.upper.min(mlo.max(mhi));
                if rep_var.lower >= rep_var.upper {
                    return Err(SpaceError::BadTying(format!(
                        "group containing `{rep_name}` has empty intersected bounds"
                    )));
                }
                is_derived[var] = true;
                out.derived.push(Derived {
                    var,
                    rep,
                    factor,
                });
            }
        }

        out.free = (0..out.vars.len()).filter(|&i| !is_derived[i]).collect();
        out.tying = plan.clone();
        out.pruned_unit = None; // pruning applies to the reduced space
        if out.free.len() != plan.reduced_dimension {
            return Err(SpaceError::BadTying(format!(
                "reduced dimension mismatch: plan says {}, space has {}",
                plan.reduced_dimension,
                out.free.len()
            )));
        }
        Ok(out)
    }

    /// Install a pruned sub-box given per-variable raw bounds. Boxes on tied
    /// (derived) variables are translated onto their representative. Boxes
    /// are clipped into the design bounds.
    pub fn set_pruned_box(
        &mut self,
        boxes: &BTreeMap<String, (f64, f64)>,
    ) -> Result<(), SpaceError> {
        let mut unit: Vec<(f64, f64)> = vec![(0.0, 1.0); self.free.len()];
        for (name, &(lo, hi)) in boxes {
            let &idx = self
                .index
                .get(name)
                .ok_or_else(|| SpaceError::UnknownVariable(name.clone()))?;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(SpaceError::BadPruning(format!(
                    "`{name}`: invalid box [{lo}, {hi}]"
                )));
            }
            // Translate derived-variable boxes to the representative.
            let (target, lo, hi) = match self.derived.iter().find(|d| d.var == idx) {
                Some(d) => (d.rep, lo / d.factor, hi / d.factor),
                None => (idx, lo, hi),
            };
            let Some(free_pos) = self.free.iter().position(|&f| f == target) else {
                continue;
            };
            let spec = &self.vars[target];
            let a = spec.to_unit(lo.max(spec.lower)).clamp(0.0, 1.0);
            let b = spec.to_unit(hi.min(spec.upper)).clamp(0.0, 1.0);
            let (a, b) = (a.min(b), a.max(b));
            let cur = unit[free_pos];
            let merged = (cur.0.max(a), cur.1.min(b));
            if merged.0 >= merged.1 {
                return Err(SpaceError::BadPruning(format!(
                    "`{name}`: box is empty after intersection with bounds"
                )));
            }
            unit[free_pos] = merged;
        }
        self.pruned_unit = Some(unit);
        Ok(())
    }

    pub fn pruned_unit_box(&self) -> Option<&[(f64, f64)]> {
        self.pruned_unit.as_deref()
    }

    /// Expand unit coordinates of the free variables into the full raw map.
    pub fn expand(&self, unit: &[f64]) -> BTreeMap<String, f64> {
        debug_assert_eq!(unit.len(), self.free.len());
        let mut raw: Vec<f64> = vec![f64::NAN; self.vars.len()];
        for (pos, &idx) in self.free.iter().enumerate() {
            raw[idx] = self.vars[idx].from_unit(unit[pos]);
        }
        for d in &self.derived {
            raw[d.var] = raw[d.rep] * d.factor;
        }
        self.vars
            .iter()
            .zip(raw)
            .map(|(v, x)| (v.name.clone(), x))
            .collect()
    }

    /// Unit coordinates of the free variables for a raw point.
    pub fn to_unit(&self, values: &BTreeMap<String, f64>) -> Result<Vec<f64>, SpaceError> {
        self.free
            .iter()
            .map(|&idx| {
                let var = &self.vars[idx];
                let value = values
                    .get(&var.name)
                    .ok_or_else(|| SpaceError::UnknownVariable(var.name.clone()))?;
                Ok(var.to_unit(*value).clamp(0.0, 1.0))
            })
            .collect()
    }

    /// Fold values given for tied (derived) variables onto their
    /// representatives when the representative itself is absent, so advisor
    /// suggestions phrased in raw variable names stay usable.
    pub fn fold_derived(&self, values: &mut BTreeMap<String, f64>) {
        for d in &self.derived {
            let var_name = &self.vars[d.var].name;
            let rep_name = &self.vars[d.rep].name;
            if let Some(&v) = values.get(var_name) {
                if !values.contains_key(rep_name) {
                    values.insert(rep_name.clone(), v / d.factor);
                }
            }
        }
    }

    /// Check a raw point against the full box (not the pruned one).
    pub fn in_bounds(&self, values: &BTreeMap<String, f64>) -> bool {
        const TOL: f64 = 1e-9;
        self.vars.iter().all(|var| match values.get(&var.name) {
            Some(&v) => {
                let span = (var.upper - var.lower).abs();
                v >= var.lower - TOL * span && v <= var.upper + TOL * span
            }
            None => false,
        })
    }

    pub fn unit_in_pruned(&self, unit: &[f64]) -> bool {
        match &self.pruned_unit {
            Some(boxes) => unit
                .iter()
                .zip(boxes)
                .all(|(u, (lo, hi))| *u >= *lo && *u <= *hi),
            None => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space3() -> DesignSpace {
        DesignSpace::new(vec![
            VarSpec {
                name: "a".into(),
                lower: 1.0,
                upper: 10.0,
                scale: Scale::Linear,
            },
            VarSpec {
                name: "b".into(),
                lower: 1e-6,
                upper: 1e-4,
                scale: Scale::Log,
            },
            VarSpec {
                name: "c".into(),
                lower: 1.0,
                upper: 10.0,
                scale: Scale::Linear,
            },
        ])
        .unwrap()
    }

    #[test]
    fn unit_round_trip() {
        let s = space3();
        let raw = s.expand(&[0.5, 0.5, 0.0]);
        assert_eq!(raw["a"], 5.5);
        assert!((raw["b"] - 1e-5).abs() < 1e-12); // log midpoint
        assert_eq!(raw["c"], 1.0);
        let unit = s.to_unit(&raw).unwrap();
        assert!((unit[0] - 0.5).abs() < 1e-12);
        assert!((unit[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn equal_tying_reduces_dimension_and_broadcasts() {
        let s = space3();
        let plan = TyingPlan {
            groups: vec![TieGroup {
                vars: vec!["c".into(), "a".into()],
                relation: TieRelation::Equal,
            }],
            reduced_dimension: 2,
        };
        let tied = s.apply_tying(&plan).unwrap();
        assert_eq!(tied.free_dim(), 2);
        let raw = tied.expand(&[1.0, 0.0]);
        assert_eq!(raw["a"], 10.0);
        assert_eq!(raw["c"], 10.0);
    }

    #[test]
    fn ratio_tying_applies_factor() {
        let s = space3();
        let plan = TyingPlan {
            groups: vec![TieGroup {
                vars: vec!["a".into(), "c".into()],
                relation: TieRelation::Ratio { num: 2, den: 1 },
            }],
            reduced_dimension: 2,
        };
        let tied = s.apply_tying(&plan).unwrap();
        // c = 2a; rep bounds shrink to keep c in [1,10] -> a in [1,5]
        let raw = tied.expand(&[1.0, 1.0]);
        assert_eq!(raw["a"], 5.0);
        assert_eq!(raw["c"], 10.0);
    }

    #[test]
    fn overlapping_groups_are_rejected() {
        let plan = TyingPlan {
            groups: vec![
                TieGroup {
                    vars: vec!["a".into(), "b".into()],
                    relation: TieRelation::Equal,
                },
                TieGroup {
                    vars: vec!["b".into(), "c".into()],
                    relation: TieRelation::Equal,
                },
            ],
            reduced_dimension: 1,
        };
        assert!(plan.validate(&space3().names()).is_err());
    }

    #[test]
    fn pruned_box_translates_derived_vars() {
        let s = space3();
        let plan = TyingPlan {
            groups: vec![TieGroup {
                vars: vec!["a".into(), "c".into()],
                relation: TieRelation::Equal,
            }],
            reduced_dimension: 2,
        };
        let mut tied = s.apply_tying(&plan).unwrap();
        let mut boxes = BTreeMap::new();
        boxes.insert("c".to_string(), (2.0, 4.0)); // derived -> lands on a
        tied.set_pruned_box(&boxes).unwrap();
        let pruned = tied.pruned_unit_box().unwrap();
        // a in [2,4] over [1,10] -> unit [1/9, 3/9]
        assert!((pruned[0].0 - 1.0 / 9.0).abs() < 1e-12);
        assert!((pruned[0].1 - 3.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_constraint_checks() {
        let rc = RatioConstraint {
            num: "a".into(),
            den: "c".into(),
            min: Some(2.0),
            max: None,
        };
        let mut values = BTreeMap::new();
        values.insert("a".to_string(), 6.0);
        values.insert("c".to_string(), 2.0);
        assert!(rc.satisfied(&values));
        values.insert("a".to_string(), 3.0);
        assert!(!rc.satisfied(&values));
    }

    #[test]
    fn in_bounds_rejects_outliers() {
        let s = space3();
        let mut p = s.expand(&[0.5, 0.5, 0.5]);
        assert!(s.in_bounds(&p));
        p.insert("a".to_string(), 100.0);
        assert!(!s.in_bounds(&p));
    }
}
