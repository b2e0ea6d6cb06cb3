//! Composition bounds and the three-tier budget ledger.
//!
//! Budget windows are tumbling over the integer day index: a "day" is one
//! index, a "month" is the 30-day block `day / 30`.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, Error, Result};

pub const DAYS_PER_MONTH: u32 = 30;

/// Default Rényi order.
pub const RENYI_ORDER: f64 = 32.0;

/// Sequential composition: the sum of the epsilons.
pub fn basic_compose(epsilons: &[f64]) -> Result<f64> {
    for &e in epsilons {
        require_positive("epsilon", e)?;
    }
    Ok(epsilons.iter().sum())
}

/// Advanced composition bound for `n` identical `epsilon`-DP queries.
pub fn advanced_compose(epsilon: f64, n: u64, delta: f64) -> Result<f64> {
    require_positive("epsilon", epsilon)?;
    if n == 0 {
        return Err(invalid("n", "need at least one query"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    let n = n as f64;
    Ok(epsilon * (2.0 * n * (1.0 / delta).ln()).sqrt() + n * epsilon * epsilon.exp_m1())
}

/// One query for parallel composition, tagged with the cohort it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortQuery<'a> {
    pub cohort: &'a str,
    pub epsilon: f64,
}

/// Parallel composition over queries on disjoint cohorts: the maximum epsilon.
///
/// Two queries naming the same cohort are not disjoint and are refused.
pub fn parallel_compose(queries: &[CohortQuery<'_>]) -> Result<f64> {
    let mut seen = BTreeSet::new();
    let mut max = 0.0f64;
    for q in queries {
        require_positive("epsilon", q.epsilon)?;
        if !seen.insert(q.cohort) {
            return Err(Error::NotDisjoint(q.cohort.to_string()));
        }
        max = max.max(q.epsilon);
    }
    Ok(max)
}

/// Rényi composition `(1/alpha) ln(sum_i exp(alpha eps_i))`.
pub fn renyi_compose(epsilons: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(invalid(
            "alpha",
            format!("Rényi order must exceed 1, got {alpha}"),
        ));
    }
    for &e in epsilons {
        require_positive("epsilon", e)?;
    }
    if epsilons.is_empty() {
        return Ok(0.0);
    }
    Ok(crate::numeric::log_sum_exp(epsilons.iter().map(|e| alpha * e)) / alpha)
}

/// Normal approximation `N(n eps, n eps^2)` of accumulated loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLossApprox {
    pub mean: f64,
    pub variance: f64,
}

pub fn gaussian_loss_approx(n: u64, epsilon: f64) -> Result<GaussianLossApprox> {
    require_positive("epsilon", epsilon)?;
    if n == 0 {
        return Err(invalid("n", "need at least one query"));
    }
    let n = n as f64;
    Ok(GaussianLossApprox {
        mean: n * epsilon,
        variance: n * epsilon * epsilon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierLimits {
    pub per_query: f64,
    pub per_cohort_day: f64,
    pub per_user_month: f64,
}

impl Default for TierLimits {
    fn default() -> Self {
        Self {
            per_query: 0.01,
            per_cohort_day: 0.10,
            per_user_month: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    PerQuery,
    PerCohortDay,
    PerUserMonth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChargeOutcome {
    Accepted,
    /// The charge would breach `tier`; the caller should serve a synthetic baseline.
    Rejected(Tier),
}

/// One committed charge; also the NDJSON audit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerEntry {
    pub day: u32,
    pub user: String,
    pub cohort: String,
    pub epsilon: f64,
}

/// Audit record for a refused charge.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub entry: LedgerEntry,
    pub tier: Tier,
}

// Slack for accumulated float error when comparing sums to tier limits, so ten
// charges of 0.01 fit a 0.10 day.
const LIMIT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Default)]
pub struct CompositionLedger {
    limits: TierLimits,
    entries: Vec<LedgerEntry>,
    cohort_day: HashMap<(String, u32), f64>,
    user_month: HashMap<(String, u32), f64>,
    rejections: Vec<Rejection>,
}

impl CompositionLedger {
    pub fn new(limits: TierLimits) -> Self {
        Self {
            limits,
            ..Self::default()
        }
    }

    pub fn limits(&self) -> TierLimits {
        self.limits
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Refused charges, in the order they were attempted.
    pub fn rejections(&self) -> &[Rejection] {
        &self.rejections
    }

    pub fn cohort_day_total(&self, cohort: &str, day: u32) -> f64 {
        self.cohort_day
            .get(&(cohort.to_string(), day))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn user_month_total(&self, user: &str, day: u32) -> f64 {
        self.user_month
            .get(&(user.to_string(), day / DAYS_PER_MONTH))
            .copied()
            .unwrap_or(0.0)
    }

    /// Attempts to record a charge. Rejected charges leave the ledger's
    /// committed state untouched and are kept in the rejection log.
    pub fn charge(&mut self, user: &str, cohort: &str, epsilon: f64, day: u32) -> Result<ChargeOutcome> {
        require_positive("epsilon", epsilon)?;
        let tier = if epsilon > self.limits.per_query + LIMIT_SLACK {
            Some(Tier::PerQuery)
        } else if self.cohort_day_total(cohort, day) + epsilon > self.limits.per_cohort_day + LIMIT_SLACK {
            Some(Tier::PerCohortDay)
        } else if self.user_month_total(user, day) + epsilon > self.limits.per_user_month + LIMIT_SLACK {
            Some(Tier::PerUserMonth)
        } else {
            None
        };
        let entry = LedgerEntry {
            day,
            user: user.to_string(),
            cohort: cohort.to_string(),
            epsilon,
        };
        if let Some(tier) = tier {
            self.rejections.push(Rejection { entry, tier });
            return Ok(ChargeOutcome::Rejected(tier));
        }
        self.commit(entry);
        Ok(ChargeOutcome::Accepted)
    }

    fn commit(&mut self, entry: LedgerEntry) {
        *self
            .cohort_day
            .entry((entry.cohort.clone(), entry.day))
            .or_default() += entry.epsilon;
        *self
            .user_month
            .entry((entry.user.clone(), entry.day / DAYS_PER_MONTH))
            .or_default() += entry.epsilon;
        self.entries.push(entry);
    }

    /// Total epsilon charged to `user` across all cohorts on days `0..=day`.
    pub fn multi_cohort_user_loss(&self, user: &str, day: u32) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.user == user && e.day <= day)
            .map(|e| e.epsilon)
            .sum()
    }

    /// Writes committed entries as newline-delimited JSON.
    pub fn export_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Replays an NDJSON audit log through [`charge`](Self::charge). Entries
    /// that no longer fit the limits are reported as an error naming the line.
    pub fn import_ndjson<R: BufRead>(limits: TierLimits, input: R) -> Result<Self> {
        let mut ledger = Self::new(limits);
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: LedgerEntry = serde_json::from_str(&line)
                .map_err(|err| Error::Validation(format!("ledger line {}: {err}", i + 1)))?;
            if let ChargeOutcome::Rejected(tier) = ledger.charge(&e.user, &e.cohort, e.epsilon, e.day)? {
                return Err(Error::Validation(format!(
                    "ledger line {}: replay exceeds {tier:?} limit",
                    i + 1
                )));
            }
        }
        Ok(ledger)
    }
}

/// A ledger shared between threads: charges are serialized behind the write
/// lock, reads of committed totals take the read lock.
#[derive(Debug, Default)]
pub struct SharedLedger {
    inner: RwLock<CompositionLedger>,
}

impl SharedLedger {
    pub fn new(limits: TierLimits) -> Self {
        Self {
            inner: RwLock::new(CompositionLedger::new(limits)),
        }
    }

    pub fn charge(&self, user: &str, cohort: &str, epsilon: f64, day: u32) -> Result<ChargeOutcome> {
        self.inner
            .write()
            .expect("ledger lock poisoned")
            .charge(user, cohort, epsilon, day)
    }

    pub fn read<T>(&self, f: impl FnOnce(&CompositionLedger) -> T) -> T {
        f(&self.inner.read().expect("ledger lock poisoned"))
    }
}
