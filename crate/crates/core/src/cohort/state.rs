//! Cohort snapshots, release gating and small-cell suppression.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::taxonomy::CohortKey;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_COUNT: u64 = 5;
pub const OTHER_BUCKET: &str = "other";
const NORMALIZATION_TOL: f64 = 1e-9;

/// Snapshot of one cohort at day `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortState {
    pub key: CohortKey,
    pub t: u32,
    size: u64,
    /// attribute value -> member count; counts sum to `size`
    attribute_counts: BTreeMap<String, u64>,
    /// simulation mode only
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub member_values: Vec<f64>,
}

impl CohortState {
    pub fn new(key: CohortKey, t: u32, attribute_counts: BTreeMap<String, u64>) -> Self {
        let size = attribute_counts.values().sum();
        Self {
            key,
            t,
            size,
            attribute_counts,
            member_values: Vec::new(),
        }
    }

    pub fn with_member_values(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() as u64 != self.size {
            return Err(Error::Validation(format!(
                "{} member values for a cohort of size {}",
                values.len(),
                self.size
            )));
        }
        self.member_values = values;
        Ok(self)
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn attribute_counts(&self) -> &BTreeMap<String, u64> {
        &self.attribute_counts
    }

    /// Attribute value probabilities; empty for an empty cohort.
    pub fn attribute_distribution(&self) -> BTreeMap<String, f64> {
        if self.size == 0 {
            return BTreeMap::new();
        }
        let n = self.size as f64;
        self.attribute_counts
            .iter()
            .map(|(k, &c)| (k.clone(), c as f64 / n))
            .collect()
    }

    pub fn entropy(&self) -> Result<f64> {
        let dist: Vec<f64> = self.attribute_distribution().into_values().collect();
        if dist.is_empty() {
            return Ok(0.0);
        }
        attribute_entropy(&dist)
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn attribute_entropy(distribution: &[f64]) -> Result<f64> {
    if distribution.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::Validation("probabilities must be finite and >= 0".into()));
    }
    let total: f64 = distribution.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Validation(format!("distribution sums to {total}")));
    }
    Ok(-distribution
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Release,
    Suppress,
}

/// Releases iff the cohort has at least `k_min` members.
pub fn gate_size(size: u64, k_min: u64) -> GateDecision {
    if size >= k_min {
        GateDecision::Release
    } else {
        GateDecision::Suppress
    }
}

pub fn gate_release(state: &CohortState, k_min: u64) -> GateDecision {
    gate_size(state.size(), k_min)
}

/// Merges attribute values held by fewer than `min_count` members into
/// [`OTHER_BUCKET`].
pub fn suppress_rare_attributes(state: &CohortState, min_count: u64) -> CohortState {
    let mut counts = BTreeMap::new();
    let mut other = 0;
    for (value, &count) in &state.attribute_counts {
        if count < min_count || value == OTHER_BUCKET {
            other += count;
        } else {
            counts.insert(value.clone(), count);
        }
    }
    if other > 0 {
        counts.insert(OTHER_BUCKET.to_string(), other);
    }
    CohortState {
        attribute_counts: counts,
        ..state.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(counts: &[(&str, u64)]) -> CohortState {
        CohortState::new(
            "25-29/F/none/US".parse().unwrap(),
            0,
            counts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        )
    }

    #[test]
    fn entropy_examples() {
        assert!((attribute_entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(attribute_entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let h = attribute_entropy(&[0.5, 0.25, 0.25]).unwrap();
        assert!((h - 1.0397).abs() < 1e-4, "{h}");
        assert!(attribute_entropy(&[0.5, 0.4]).is_err());
        assert!(attribute_entropy(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn gate_examples() {
        assert_eq!(gate_size(99, 100), GateDecision::Suppress);
        assert_eq!(gate_size(100, 100), GateDecision::Release);
        assert_eq!(gate_size(0, 100), GateDecision::Suppress);
        let s = state(&[("a", 60), ("b", 40)]);
        assert_eq!(gate_release(&s, 100), GateDecision::Release);
    }

    #[test]
    fn suppression_examples() {
        let s = state(&[("a", 10), ("b", 7)]);
        assert_eq!(suppress_rare_attributes(&s, 5), s);

        let s = state(&[("a", 10), ("b", 9), ("c", 1)]);
        let out = suppress_rare_attributes(&s, 5);
        assert_eq!(out.attribute_counts().get(OTHER_BUCKET), Some(&1));
        assert!(!out.attribute_counts().contains_key("c"));
        let total: f64 = out.attribute_distribution().values().sum();
        assert!((total - 1.0).abs() < 1e-12);

        let s = state(&[("a", 1), ("b", 2)]);
        let out = suppress_rare_attributes(&s, 5);
        assert_eq!(out.attribute_distribution().get(OTHER_BUCKET), Some(&1.0));
        assert_eq!(out.attribute_counts().len(), 1);
    }

    #[test]
    fn member_values_must_match_size() {
        let s = state(&[("a", 2)]);
        assert!(s.clone().with_member_values(vec![1.0]).is_err());
        assert!(s.with_member_values(vec![1.0, 2.0]).is_ok());
    }

    proptest! {
        #[test]
        fn uniform_maximizes_entropy(weights in prop::collection::vec(0.0f64..1.0, 1..20)) {
            let total: f64 = weights.iter().sum();
            prop_assume!(total > 1e-6);
            let dist: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let h = attribute_entropy(&dist).unwrap();
            prop_assert!(h <= (dist.len() as f64).ln() + 1e-12);
            prop_assert!(h >= 0.0);
        }

        #[test]
        fn gate_is_monotone(n in 0u64..10_000, extra in 0u64..1_000, k_min in 1u64..1_000) {
            if gate_size(n, k_min) == GateDecision::Release {
                prop_assert_eq!(gate_size(n + extra, k_min), GateDecision::Release);
            }
        }

        #[test]
        fn suppression_preserves_size(counts in prop::collection::vec(0u64..20, 1..12), min in 1u64..10) {
            let named: Vec<(String, u64)> =
                counts.iter().enumerate().map(|(i, c)| (format!("v{i}"), *c)).collect();
            let s = CohortState::new(
                "25-29/F/none/US".parse().unwrap(),
                0,
                named.into_iter().collect(),
            );
            let out = suppress_rare_attributes(&s, min);
            prop_assert_eq!(out.size(), s.size());
            prop_assert_eq!(out.attribute_counts().values().sum::<u64>(), s.size());
            prop_assert!(out
                .attribute_counts()
                .iter()
                .all(|(k, c)| k == OTHER_BUCKET || *c >= min));
        }
    }
}
