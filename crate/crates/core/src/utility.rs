//! Rank-based utility of noisy percentile reporting.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dp::{clipped_mean_sensitivity, sample_laplace, ClipBounds};
use crate::error::{invalid, require_positive, Error, Result};
use crate::rng::{stream, Component};

pub const DEFAULT_THRESHOLD_PP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub rank_variance: f64,
    pub spearman: f64,
    pub percentile_mae: f64,
    pub user_error_rate: f64,
}

fn check_lengths(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "length mismatch: {} true vs {} noisy values",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min {
        return Err(Error::Validation(format!(
            "need at least {min} values, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Validation("NaN values cannot be ranked".into()));
    }
    Ok(())
}

/// Midrank percentile of every element: `100 * (less + 0.5 * equal) / n`,
/// where `equal` counts the element itself.
pub fn percentile_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let equal = (j - i + 1) as f64;
        let pct = 100.0 * (i as f64 + 0.5 * equal) / n as f64;
        for &k in &order[i..=j] {
            out[k] = pct;
        }
        i = j + 1;
    }
    out
}

fn percentile_shifts(true_values: &[f64], noisy_values: &[f64]) -> Vec<f64> {
    let a = percentile_ranks(true_values);
    let b = percentile_ranks(noisy_values);
    b.iter().zip(&a).map(|(x, y)| x - y).collect()
}

/// Population variance of per-member percentile shifts.
pub fn rank_variance(true_values: &[f64], noisy_values: &[f64]) -> Result<f64> {
    check_lengths(true_values, noisy_values, 2)?;
    let d = percentile_shifts(true_values, noisy_values);
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    Ok(d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(true_values: &[f64], noisy_values: &[f64]) -> Result<f64> {
    check_lengths(true_values, noisy_values, 2)?;
    let a = percentile_ranks(true_values);
    let b = percentile_ranks(noisy_values);
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("all ranks tie on one side".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Fraction of members whose percentile moved strictly more than `threshold_pp`.
pub fn user_error_rate(true_values: &[f64], noisy_values: &[f64], threshold_pp: f64) -> Result<f64> {
    check_lengths(true_values, noisy_values, 1)?;
    let d = percentile_shifts(true_values, noisy_values);
    Ok(d.iter().filter(|x| x.abs() > threshold_pp).count() as f64 / d.len() as f64)
}

pub fn percentile_mae(true_values: &[f64], noisy_values: &[f64]) -> Result<f64> {
    check_lengths(true_values, noisy_values, 1)?;
    let d = percentile_shifts(true_values, noisy_values);
    Ok(d.iter().map(|x| x.abs()).sum::<f64>() / d.len() as f64)
}

pub fn utility_report(true_values: &[f64], noisy_values: &[f64]) -> Result<UtilityReport> {
    Ok(UtilityReport {
        rank_variance: rank_variance(true_values, noisy_values)?,
        spearman: spearman(true_values, noisy_values)?,
        percentile_mae: percentile_mae(true_values, noisy_values)?,
        user_error_rate: user_error_rate(true_values, noisy_values, DEFAULT_THRESHOLD_PP)?,
    })
}

/// Generative model for one benchmark metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricModel {
    pub mean: f64,
    pub sd: f64,
    pub bounds: ClipBounds,
}

impl Default for MetricModel {
    fn default() -> Self {
        Self {
            mean: 70.0,
            sd: 10.0,
            bounds: ClipBounds::new(20.0, 120.0).expect("valid default bounds"),
        }
    }
}

/// Per-member noise scale: the clipped-mean sensitivity over the cohort
/// divided by epsilon.
pub fn member_noise_scale(metric: &MetricModel, cohort_size: u64, epsilon: f64) -> Result<f64> {
    require_positive("epsilon", epsilon)?;
    Ok(clipped_mean_sensitivity(metric.bounds, cohort_size)?.value() / epsilon)
}

/// Draws clipped member values and their per-member noisy counterparts.
pub fn noisy_cohort<R: Rng + ?Sized>(
    metric: &MetricModel,
    cohort_size: u64,
    epsilon: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    require_positive("sd", metric.sd)?;
    let scale = member_noise_scale(metric, cohort_size, epsilon)?;
    let normal = Normal::new(metric.mean, metric.sd).map_err(|e| invalid("sd", e.to_string()))?;
    let truth: Vec<f64> = (0..cohort_size)
        .map(|_| metric.bounds.clamp(normal.sample(rng)))
        .collect();
    let noisy = truth
        .iter()
        .map(|v| Ok(v + sample_laplace(scale, rng)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok((truth, noisy))
}

/// Mean utility over `repetitions` independent cohorts. Repetition `r` uses
/// the utility stream of run `r`, so different epsilons see the same data.
pub fn simulate_utility(
    metric: &MetricModel,
    cohort_size: u64,
    epsilon: f64,
    repetitions: u64,
    seed: u64,
) -> Result<UtilityReport> {
    if repetitions == 0 {
        return Err(invalid("repetitions", "must be positive"));
    }
    if cohort_size < 2 {
        return Err(invalid("cohort_size", "rank metrics need at least two members"));
    }
    let mut acc = [0.0; 4];
    for r in 0..repetitions {
        let mut rng = stream(seed, r, Component::Utility);
        let (truth, noisy) = noisy_cohort(metric, cohort_size, epsilon, &mut rng)?;
        let u = utility_report(&truth, &noisy)?;
        for (a, v) in acc
            .iter_mut()
            .zip([u.rank_variance, u.spearman, u.percentile_mae, u.user_error_rate])
        {
            *a += v;
        }
    }
    let n = repetitions as f64;
    Ok(UtilityReport {
        rank_variance: acc[0] / n,
        spearman: acc[1] / n,
        percentile_mae: acc[2] / n,
        user_error_rate: acc[3] / n,
    })
}
