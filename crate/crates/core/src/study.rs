//! Matched-study data model.
//!
//! A study is an ordered list of matched sets, each holding one treated unit
//! and at least one control. Everything here is immutable once validated.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SensError};

/// A bound on the hidden bias of a matched set: a finite value `>= 1` or
/// [`Gamma::UNBOUNDED`].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Gamma(f64);

impl Gamma {
    /// Randomized assignment within the set.
    pub const ONE: Gamma = Gamma(1.0);
    /// No restriction on the hidden bias.
    pub const UNBOUNDED: Gamma = Gamma(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 1.0 {
            return Err(SensError::InvalidParameter(format!(
                "hidden bias bound must be >= 1, got {value}"
            )));
        }
        Ok(Gamma(value))
    }

    /// The bound as a float; unbounded maps to `f64::INFINITY`.
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_unbounded(self) -> bool {
        self.0.is_infinite()
    }

    /// Probability that the larger-score unit of a pair is treated in the
    /// worst case: `Γ / (1 + Γ)`, and 1 when unbounded.
    pub fn odds_probability(self) -> f64 {
        if self.is_unbounded() {
            1.0
        } else {
            self.0 / (1.0 + self.0)
        }
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_unbounded() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

// Serialized as a number, or the string "inf" when unbounded.
impl Serialize for Gamma {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_unbounded() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        let value = match Repr::deserialize(d)? {
            Repr::Number(v) => v,
            Repr::Text(t) if t == "inf" => f64::INFINITY,
            Repr::Text(t) => t.parse::<f64>().map_err(serde::de::Error::custom)?,
        };
        Gamma::new(value).map_err(serde::de::Error::custom)
    }
}

/// One matched set: outcomes in input order and the index of its treated unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSet {
    pub set_id: String,
    pub outcomes: Vec<f64>,
    pub treated_index: usize,
    /// Extra per-unit columns carried through untouched.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub covariates: Vec<Vec<String>>,
}

impl MatchedSet {
    pub fn new(set_id: impl Into<String>, outcomes: Vec<f64>, treated_index: usize) -> Self {
        MatchedSet {
            set_id: set_id.into(),
            outcomes,
            treated_index,
            covariates: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.outcomes.len()
    }

    fn check(&self) -> Result<()> {
        if self.outcomes.len() < 2 {
            return Err(SensError::SetTooSmall(self.set_id.clone()));
        }
        if self.treated_index >= self.outcomes.len() {
            return Err(SensError::TreatedOutOfRange {
                set_id: self.set_id.clone(),
                index: self.treated_index,
                size: self.outcomes.len(),
            });
        }
        if let Some(unit) = self.outcomes.iter().position(|y| !y.is_finite()) {
            return Err(SensError::NonFiniteOutcome {
                set_id: self.set_id.clone(),
                unit,
            });
        }
        Ok(())
    }
}

/// A set as read from an input source, before the one-treated check.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawSet {
    pub set_id: String,
    pub outcomes: Vec<f64>,
    pub treated: Vec<bool>,
    pub covariates: Vec<Vec<String>>,
}

/// A validated matched study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedStudy {
    sets: Vec<MatchedSet>,
}

impl MatchedStudy {
    /// Builds a study from sets whose treated unit is already known.
    pub fn new(sets: Vec<MatchedSet>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(sets.len());
        for set in &sets {
            set.check()?;
            if !seen.insert(set.set_id.as_str()) {
                return Err(SensError::DuplicateSetId(set.set_id.clone()));
            }
        }
        Ok(MatchedStudy { sets })
    }

    pub fn sets(&self) -> &[MatchedSet] {
        &self.sets
    }

    /// Number of matched sets, `I`.
    pub fn n_sets(&self) -> usize {
        self.sets.len()
    }

    /// Total number of units, `N`.
    pub fn n_units(&self) -> usize {
        self.sets.iter().map(MatchedSet::size).sum()
    }

    pub fn is_pair_study(&self) -> bool {
        self.sets.iter().all(|s| s.size() == 2)
    }

    /// Treated index of every set, in set order.
    pub fn assignment(&self) -> Vec<usize> {
        self.sets.iter().map(|s| s.treated_index).collect()
    }

    /// Same outcomes, different treated units.
    pub fn with_assignment(&self, assignment: &[usize]) -> Result<Self> {
        if assignment.len() != self.sets.len() {
            return Err(SensError::LengthMismatch {
                expected: self.sets.len(),
                got: assignment.len(),
            });
        }
        let sets = self
            .sets
            .iter()
            .zip(assignment)
            .map(|(s, &a)| MatchedSet {
                treated_index: a,
                ..s.clone()
            })
            .collect();
        MatchedStudy::new(sets)
    }

    /// Outcomes flattened in set order (length `N`).
    pub fn flat_outcomes(&self) -> Vec<f64> {
        self.sets.iter().flat_map(|s| s.outcomes.iter().copied()).collect()
    }
}

/// Validates raw input sets into a study. Set order is preserved.
pub fn validate_study(raw: Vec<RawSet>) -> Result<MatchedStudy> {
    let mut sets = Vec::with_capacity(raw.len());
    for r in raw {
        if r.treated.len() != r.outcomes.len() {
            return Err(SensError::LengthMismatch {
                expected: r.outcomes.len(),
                got: r.treated.len(),
            });
        }
        if r.outcomes.len() < 2 {
            return Err(SensError::SetTooSmall(r.set_id));
        }
        let mut treated = r.treated.iter().enumerate().filter(|(_, &t)| t).map(|(j, _)| j);
        let treated_index = match (treated.next(), treated.next()) {
            (None, _) => return Err(SensError::ZeroTreated(r.set_id)),
            (Some(_), Some(_)) => return Err(SensError::MultiTreated(r.set_id)),
            (Some(j), None) => j,
        };
        sets.push(MatchedSet {
            set_id: r.set_id,
            outcomes: r.outcomes,
            treated_index,
            covariates: r.covariates,
        });
    }
    MatchedStudy::new(sets)
}

/// Which null hypothesis on the individual effects is being tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullKind {
    /// Every effect equals `delta`.
    Sharp,
    /// Every effect is at most `delta`.
    BoundedAbove,
    /// Every effect is at least `delta`.
    BoundedBelow,
}

/// Hypothesized effects (or effect bounds), one per unit in set order.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectSpec {
    pub kind: NullKind,
    pub delta: Vec<f64>,
}

impl EffectSpec {
    /// Zero effect for all `n_units` units.
    pub fn zero(kind: NullKind, n_units: usize) -> Self {
        EffectSpec {
            kind,
            delta: vec![0.0; n_units],
        }
    }

    pub fn constant(kind: NullKind, n_units: usize, delta: f64) -> Self {
        EffectSpec {
            kind,
            delta: vec![delta; n_units],
        }
    }
}

/// Rewrites observed outcomes so that testing `spec` on the original study
/// is the zero-effect test (sharp or non-positive bounded) on the result.
///
/// Sharp and bounded-above nulls use `Y - Z∘δ`; bounded-below nulls use
/// `-Y + Z∘δ`.
pub fn transform_for_null(study: &MatchedStudy, spec: &EffectSpec) -> Result<MatchedStudy> {
    let n = study.n_units();
    if spec.delta.len() != n {
        return Err(SensError::LengthMismatch {
            expected: n,
            got: spec.delta.len(),
        });
    }
    if let Some(pos) = spec.delta.iter().position(|d| !d.is_finite()) {
        return Err(SensError::InvalidParameter(format!(
            "non-finite hypothesized effect at unit {pos}"
        )));
    }
    let mut offset = 0;
    let mut sets = Vec::with_capacity(study.n_sets());
    for set in study.sets() {
        let delta = &spec.delta[offset..offset + set.size()];
        offset += set.size();
        let outcomes = set
            .outcomes
            .iter()
            .zip(delta)
            .enumerate()
            .map(|(j, (&y, &d))| {
                let z = if j == set.treated_index { 1.0 } else { 0.0 };
                match spec.kind {
                    NullKind::Sharp | NullKind::BoundedAbove => y - z * d,
                    NullKind::BoundedBelow => -y + z * d,
                }
            })
            .collect();
        sets.push(MatchedSet {
            outcomes,
            ..set.clone()
        });
    }
    MatchedStudy::new(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: &str, outcomes: &[f64], treated: &[bool]) -> RawSet {
        RawSet {
            set_id: id.to_string(),
            outcomes: outcomes.to_vec(),
            treated: treated.to_vec(),
            covariates: Vec::new(),
        }
    }

    #[test]
    fn minimal_study_validates() {
        let study = validate_study(vec![
            raw("a", &[1.0, 0.0], &[true, false]),
            raw("b", &[2.0, 3.0], &[false, true]),
        ])
        .unwrap();
        assert_eq!(study.n_sets(), 2);
        assert_eq!(study.n_units(), 4);
        assert_eq!(study.assignment(), vec![0, 1]);
    }

    #[test]
    fn rejects_bad_sets() {
        assert_eq!(
            validate_study(vec![raw("x", &[1.0, 0.0], &[true, true])]),
            Err(SensError::MultiTreated("x".into()))
        );
        assert_eq!(
            validate_study(vec![raw("x", &[1.0, 0.0], &[false, false])]),
            Err(SensError::ZeroTreated("x".into()))
        );
        assert_eq!(
            validate_study(vec![raw("x", &[1.0], &[true])]),
            Err(SensError::SetTooSmall("x".into()))
        );
        assert_eq!(
            validate_study(vec![raw("x", &[1.0, f64::NAN], &[true, false])]),
            Err(SensError::NonFiniteOutcome {
                set_id: "x".into(),
                unit: 1
            })
        );
        assert_eq!(
            validate_study(vec![
                raw("x", &[1.0, 0.0], &[true, false]),
                raw("x", &[1.0, 0.0], &[true, false]),
            ]),
            Err(SensError::DuplicateSetId("x".into()))
        );
    }

    #[test]
    fn gamma_bounds() {
        assert!(Gamma::new(0.5).is_err());
        assert!(Gamma::new(f64::NAN).is_err());
        assert_eq!(Gamma::new(3.0).unwrap().odds_probability(), 0.75);
        assert_eq!(Gamma::UNBOUNDED.odds_probability(), 1.0);
        assert!(Gamma::new(f64::INFINITY).unwrap().is_unbounded());
    }

    #[test]
    fn transform_examples() {
        let study = MatchedStudy::new(vec![MatchedSet::new("p", vec![5.0, 3.0], 0)]).unwrap();
        let same = transform_for_null(&study, &EffectSpec::zero(NullKind::Sharp, 2)).unwrap();
        assert_eq!(same, study);

        let shifted =
            transform_for_null(&study, &EffectSpec::constant(NullKind::Sharp, 2, 2.0)).unwrap();
        assert_eq!(shifted.sets()[0].outcomes, vec![3.0, 3.0]);

        let flipped =
            transform_for_null(&study, &EffectSpec::zero(NullKind::BoundedBelow, 2)).unwrap();
        assert_eq!(flipped.sets()[0].outcomes, vec![-5.0, -3.0]);

        assert_eq!(
            transform_for_null(&study, &EffectSpec::zero(NullKind::Sharp, 3)),
            Err(SensError::LengthMismatch {
                expected: 2,
                got: 3
            })
        );
    }

    #[test]
    fn sharp_transform_is_involutive() {
        let study = MatchedStudy::new(vec![
            MatchedSet::new("a", vec![1.5, -0.25, 4.0], 2),
            MatchedSet::new("b", vec![0.5, 2.0], 0),
        ])
        .unwrap();
        let delta = vec![0.75, 1.0, -2.5, 3.0, 0.125];
        let fwd = transform_for_null(
            &study,
            &EffectSpec {
                kind: NullKind::Sharp,
                delta: delta.clone(),
            },
        )
        .unwrap();
        let back = transform_for_null(
            &fwd,
            &EffectSpec {
                kind: NullKind::Sharp,
                delta: delta.iter().map(|d| -d).collect(),
            },
        )
        .unwrap();
        assert_eq!(back, study);
    }
}
