//! Labeled synthetic reference distributions for cohorts that cannot be
//! released: nearest sufficient cohort, demographic adjustment, uncertainty.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::CohortKey;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_INFLATION: f64 = 1.15;
/// Half-width of an unwidened interval, in units of the reference scale.
pub const DEFAULT_BASE_HALF_WIDTH: f64 = 0.1;
pub const DEFAULT_GRID: [f64; 7] = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceWeights {
    pub age: f64,
    pub sex: f64,
    pub condition: f64,
    pub region: f64,
}

impl Default for DistanceWeights {
    fn default() -> Self {
        Self {
            age: 1.0,
            sex: 2.0,
            condition: 3.0,
            region: 2.0,
        }
    }
}

impl DistanceWeights {
    fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("weights.age", self.age),
            ("weights.sex", self.sex),
            ("weights.condition", self.condition),
            ("weights.region", self.region),
        ] {
            if !(w.is_finite() && w > 0.0) {
                return Err(invalid(name, format!("must be positive, got {w}")));
            }
        }
        Ok(())
    }
}

/// Weighted attribute distance: age bins count per step, every other
/// attribute counts once on mismatch.
pub fn taxonomy_distance(a: &CohortKey, b: &CohortKey, w: &DistanceWeights) -> f64 {
    let steps = a.age_bin.index().abs_diff(b.age_bin.index()) as f64;
    let mut d = steps * w.age;
    if a.sex != b.sex {
        d += w.sex;
    }
    if a.condition_category != b.condition_category {
        d += w.condition;
    }
    if a.region != b.region {
        d += w.region;
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nearest {
    pub key: CohortKey,
    pub distance: f64,
}

/// Closest cohort with at least `k_min` members. Ties go to the larger
/// cohort, then to the lexicographically smaller key.
pub fn nearest_cohort(
    target: &CohortKey,
    available: &[(CohortKey, u64)],
    k_min: u64,
    weights: &DistanceWeights,
) -> Result<Nearest> {
    weights.validate()?;
    available
        .iter()
        .filter(|(_, n)| *n >= k_min)
        .map(|(k, n)| (taxonomy_distance(target, k, weights), *n, k))
        .min_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(b.1.cmp(&a.1))
                .then_with(|| a.2.to_string().cmp(&b.2.to_string()))
        })
        .map(|(distance, _, key)| Nearest {
            key: key.clone(),
            distance,
        })
        .ok_or(Error::GlobalFallback { k_min })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantilePoint {
    pub p: f64,
    pub value: f64,
}

/// Location shift added per step and scale multiplied per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factor {
    #[serde(default)]
    pub location_shift: f64,
    #[serde(default = "one")]
    pub scale_factor: f64,
}

fn one() -> f64 {
    1.0
}

/// Factors are applied when moving from the entry's cohort toward a target
/// that differs in that attribute. Age factors apply per bin step and are
/// signed: a target in an older bin adds the shift, a younger one subtracts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adjustments {
    pub age_step: Option<Factor>,
    pub sex: Option<Factor>,
    pub condition: Option<Factor>,
    pub region: Option<Factor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormEntry {
    pub cohort_key: CohortKey,
    pub location: f64,
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantiles: Option<Vec<QuantilePoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjustments: Option<Adjustments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormTable {
    pub source: String,
    #[serde(default)]
    pub provenance: String,
    pub entries: Vec<NormEntry>,
}

fn check_grid(grid: &[QuantilePoint]) -> Result<()> {
    for q in grid {
        if !(q.p > 0.0 && q.p < 1.0) || !q.value.is_finite() {
            return Err(Error::Validation(format!(
                "quantile point ({}, {}) out of range",
                q.p, q.value
            )));
        }
    }
    if grid
        .windows(2)
        .any(|w| w[1].p <= w[0].p || w[1].value < w[0].value)
    {
        return Err(Error::Validation("quantile grid must be non-decreasing".into()));
    }
    Ok(())
}

impl NormTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let table: NormTable = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source.trim().is_empty() {
            return Err(Error::Validation("norm table source must not be empty".into()));
        }
        let mut seen = BTreeMap::new();
        for e in &self.entries {
            if !e.location.is_finite() {
                return Err(Error::Validation(format!(
                    "{}: location not finite",
                    e.cohort_key
                )));
            }
            if !(e.scale.is_finite() && e.scale > 0.0) {
                return Err(Error::Validation(format!(
                    "{}: scale must be positive",
                    e.cohort_key
                )));
            }
            if let Some(grid) = &e.quantiles {
                check_grid(grid)?;
            }
            if seen.insert(e.cohort_key.to_string(), ()).is_some() {
                return Err(Error::Validation(format!("duplicate entry {}", e.cohort_key)));
            }
        }
        Ok(())
    }

    pub fn entry(&self, key: &CohortKey) -> Option<&NormEntry> {
        self.entries.iter().find(|e| &e.cohort_key == key)
    }

    pub fn provenance_label(&self) -> String {
        if self.provenance.trim().is_empty() {
            self.source.clone()
        } else {
            format!("{}: {}", self.source, self.provenance)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub weights: DistanceWeights,
    /// Interval widening per unit of taxonomy distance.
    pub inflation: f64,
    pub base_half_width: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            weights: DistanceWeights::default(),
            inflation: DEFAULT_INFLATION,
            base_half_width: DEFAULT_BASE_HALF_WIDTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileInterval {
    pub p: f64,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBaseline {
    pub synthetic: bool,
    pub source_cohort: CohortKey,
    pub target_cohort: CohortKey,
    pub distance: f64,
    pub location: f64,
    pub scale: f64,
    pub quantiles: Vec<QuantileInterval>,
    pub adjustment: String,
    pub warning: bool,
    pub provenance: String,
}

fn reference_grid(entry: &NormEntry) -> Vec<QuantilePoint> {
    if let Some(grid) = &entry.quantiles {
        return grid.clone();
    }
    let normal = Normal::new(entry.location, entry.scale).expect("validated scale");
    DEFAULT_GRID
        .iter()
        .map(|&p| QuantilePoint {
            p,
            value: normal.inverse_cdf(p),
        })
        .collect()
}

/// Moves a reference distribution from `source` to `target` using the
/// entry's adjustment factors. An attribute that differs without a
/// configured factor passes through unadjusted, sets `warning` and costs one
/// extra inflation step.
pub fn adjust_baseline(
    reference: &NormEntry,
    target: &CohortKey,
    source: &CohortKey,
    config: &BaselineConfig,
    provenance: &str,
) -> Result<SyntheticBaseline> {
    config.weights.validate()?;
    if !(config.inflation.is_finite() && config.inflation >= 1.0) {
        return Err(invalid("inflation", "must be at least 1"));
    }
    if !(config.base_half_width.is_finite() && config.base_half_width >= 0.0) {
        return Err(invalid("base_half_width", "must be non-negative"));
    }
    if !(reference.scale.is_finite() && reference.scale > 0.0) {
        return Err(Error::Validation("reference scale must be positive".into()));
    }
    if provenance.trim().is_empty() {
        return Err(Error::Validation("provenance must not be empty".into()));
    }
    let adj = reference.adjustments.clone().unwrap_or_default();
    let mut location = reference.location;
    let mut scale = reference.scale;
    let mut notes = Vec::new();
    let mut missing = 0u32;

    let steps = target.age_bin.index() as i64 - source.age_bin.index() as i64;
    let mismatches = [
        ("age", steps != 0, adj.age_step, steps as f64),
        ("sex", target.sex != source.sex, adj.sex, 1.0),
        (
            "condition",
            target.condition_category != source.condition_category,
            adj.condition,
            1.0,
        ),
        ("region", target.region != source.region, adj.region, 1.0),
    ];
    for (name, differs, factor, k) in mismatches {
        if !differs {
            continue;
        }
        match factor {
            Some(f) => {
                location += k * f.location_shift;
                scale *= f.scale_factor.powf(k.abs());
                notes.push(format!(
                    "{name}: shift {:+} x {}, scale x {}",
                    f.location_shift,
                    k,
                    f.scale_factor.powf(k.abs())
                ));
            }
            None => {
                missing += 1;
                notes.push(format!("{name}: no factor, unadjusted"));
            }
        }
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Validation("adjusted scale must be positive".into()));
    }

    let distance = taxonomy_distance(target, source, &config.weights);
    let half = config.base_half_width * scale * config.inflation.powf(distance + missing as f64);
    let ratio = scale / reference.scale;
    let quantiles = reference_grid(reference)
        .into_iter()
        .map(|q| {
            let value = location + (q.value - reference.location) * ratio;
            QuantileInterval {
                p: q.p,
                value,
                lower: value - half,
                upper: value + half,
            }
        })
        .collect();
    let adjustment = if notes.is_empty() {
        "identity".to_string()
    } else {
        notes.join("; ")
    };
    Ok(SyntheticBaseline {
        synthetic: true,
        source_cohort: source.clone(),
        target_cohort: target.clone(),
        distance,
        location,
        scale,
        quantiles,
        adjustment,
        warning: missing > 0,
        provenance: provenance.to_string(),
    })
}

/// Nearest sufficient cohort that has a norm entry, adjusted to the target.
pub fn synthetic_for(
    table: &NormTable,
    target: &CohortKey,
    available: &[(CohortKey, u64)],
    k_min: u64,
    config: &BaselineConfig,
) -> Result<SyntheticBaseline> {
    let with_norms: Vec<(CohortKey, u64)> = available
        .iter()
        .filter(|(k, _)| table.entry(k).is_some())
        .cloned()
        .collect();
    let nearest = nearest_cohort(target, &with_norms, k_min, &config.weights)?;
    let entry = table.entry(&nearest.key).expect("filtered on entries");
    adjust_baseline(entry, target, &nearest.key, config, &table.provenance_label())
}

/// Serialized baseline record.
pub fn emit_with_uncertainty(baseline: &SyntheticBaseline) -> Result<String> {
    Ok(serde_json::to_string(baseline)?)
}

pub fn parse_baseline(record: &str) -> Result<SyntheticBaseline> {
    let b: SyntheticBaseline = serde_json::from_str(record)?;
    if !b.synthetic {
        return Err(Error::Validation(
            "baseline record must be labeled synthetic".into(),
        ));
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(s: &str) -> CohortKey {
        s.parse().unwrap()
    }

    fn entry(k: &str, adjustments: Option<Adjustments>) -> NormEntry {
        NormEntry {
            cohort_key: key(k),
            location: 70.0,
            scale: 10.0,
            quantiles: None,
            adjustments,
        }
    }

    #[test]
    fn target_itself_is_nearest() {
        let t = key("25-29/F/cardiovascular/US");
        let avail = vec![(t.clone(), 500), (key("30-34/F/cardiovascular/US"), 900)];
        let n = nearest_cohort(&t, &avail, 100, &DistanceWeights::default()).unwrap();
        assert_eq!(n.key, t);
        assert_eq!(n.distance, 0.0);
    }

    #[test]
    fn one_bin_step() {
        let t = key("25-29/F/cardiovascular/US");
        let avail = vec![
            (t.clone(), 10),
            (key("30-34/F/cardiovascular/US"), 150),
            (key("25-29/M/cardiovascular/US"), 900),
        ];
        let n = nearest_cohort(&t, &avail, 100, &DistanceWeights::default()).unwrap();
        assert_eq!(n.key.to_string(), "30-34/F/cardiovascular/US");
        assert_eq!(n.distance, 1.0);
    }

    #[test]
    fn ties_prefer_size_then_key() {
        let t = key("25-29/F/cardiovascular/US");
        let w = DistanceWeights::default();
        let a = key("20-24/F/cardiovascular/US");
        let b = key("30-34/F/cardiovascular/US");
        let n = nearest_cohort(&t, &[(b.clone(), 100), (a.clone(), 200)], 100, &w).unwrap();
        assert_eq!(n.key, a);
        let n = nearest_cohort(&t, &[(b.clone(), 300), (a.clone(), 200)], 100, &w).unwrap();
        assert_eq!(n.key, b);
        let n = nearest_cohort(&t, &[(b, 200), (a.clone(), 200)], 100, &w).unwrap();
        assert_eq!(n.key, a);
    }

    #[test]
    fn all_insufficient_is_global_fallback() {
        let t = key("25-29/F/cardiovascular/US");
        let r = nearest_cohort(&t, &[(t.clone(), 99)], 100, &DistanceWeights::default());
        assert!(matches!(r, Err(Error::GlobalFallback { k_min: 100 })));
    }

    #[test]
    fn identity_adjustment() {
        let t = key("25-29/F/cardiovascular/US");
        let b = adjust_baseline(
            &entry("25-29/F/cardiovascular/US", None),
            &t,
            &t,
            &BaselineConfig::default(),
            "norms",
        )
        .unwrap();
        assert_eq!(b.adjustment, "identity");
        assert!(!b.warning);
        assert_eq!(b.location, 70.0);
        for q in &b.quantiles {
            assert!((q.upper - q.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn age_step_shift() {
        let adj = Adjustments {
            age_step: Some(Factor {
                location_shift: 2.0,
                scale_factor: 1.0,
            }),
            ..Default::default()
        };
        let src = key("25-29/F/cardiovascular/US");
        let tgt = key("30-34/F/cardiovascular/US");
        let e = entry("25-29/F/cardiovascular/US", Some(adj));
        let b = adjust_baseline(&e, &tgt, &src, &BaselineConfig::default(), "norms").unwrap();
        assert_eq!(b.location, 72.0);
        assert!(!b.warning);
        let median = b.quantiles.iter().find(|q| q.p == 0.5).unwrap();
        assert!((median.value - 72.0).abs() < 1e-9);
        assert!((median.upper - median.value - 1.15).abs() < 1e-12);
        // the reverse direction subtracts
        let back = adjust_baseline(&e, &src, &tgt, &BaselineConfig::default(), "norms").unwrap();
        assert_eq!(back.location, 68.0);
    }

    #[test]
    fn missing_factor_warns_and_widens() {
        let src = key("25-29/F/cardiovascular/US");
        let tgt = key("25-29/M/cardiovascular/US");
        let e = entry("25-29/F/cardiovascular/US", None);
        let b = adjust_baseline(&e, &tgt, &src, &BaselineConfig::default(), "norms").unwrap();
        assert!(b.warning);
        assert_eq!(b.location, 70.0);
        let q = b.quantiles[0];
        assert!((q.upper - q.value - 1.15f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn table_validation() {
        let ok = r#"{"source":"norms v1","entries":[{"cohort_key":"25-29/F/none/US","location":70,"scale":10,
            "quantiles":[{"p":0.1,"value":57},{"p":0.5,"value":70}]}]}"#;
        assert!(NormTable::from_json(ok).is_ok());
        let bad_scale =
            r#"{"source":"x","entries":[{"cohort_key":"25-29/F/none/US","location":70,"scale":0}]}"#;
        assert!(NormTable::from_json(bad_scale).is_err());
        let bad_grid = r#"{"source":"x","entries":[{"cohort_key":"25-29/F/none/US","location":70,"scale":1,
            "quantiles":[{"p":0.1,"value":5},{"p":0.5,"value":4}]}]}"#;
        assert!(NormTable::from_json(bad_grid).is_err());
        let unknown = r#"{"source":"x","entries":[],"extra":1}"#;
        assert!(NormTable::from_json(unknown).is_err());
    }

    #[test]
    fn record_round_trip() {
        let t = key("25-29/F/cardiovascular/US");
        let b = adjust_baseline(
            &entry("25-29/F/cardiovascular/US", None),
            &t,
            &t,
            &BaselineConfig::default(),
            "norms",
        )
        .unwrap();
        let rec = emit_with_uncertainty(&b).unwrap();
        assert!(rec.contains("\"synthetic\":true"));
        assert_eq!(parse_baseline(&rec).unwrap(), b);
    }
}
