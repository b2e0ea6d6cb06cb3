//! Monte Carlo privacy-loss simulation and tail-risk estimation.
//!
//! One run follows a single target inside a dynamic cohort. Each day the
//! cohort churns and grows, the query generator picks a metric, a noisy
//! count is released when the cohort is large enough, and the adversary
//! updates its posterior over "which candidate is the member". The loss is
//! `ln(posterior / prior)` for the target.
//!
//! Cohort members carry standardized scores on a panel of metrics. Queries
//! count members above a per-metric threshold, so every release has
//! sensitivity 1.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{loss_from_posterior, AdversaryBelief, CountPredictive, KnownSummary};
use crate::cohort::{gate_size, GateDecision};
use crate::dp::{laplace_release, open_unit, Sensitivity};
use crate::error::{invalid, require_positive, require_probability, Error, Result};
use crate::rng::{stream, Component};
use crate::safeguards::{
    CacheOutcome, CacheStats, QueryDescriptor, RateDecision, RateLimiter, ResultCache, DEFAULT_Q_MAX,
};
use crate::utility::{MetricModel, UtilityReport};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
pub const MAX_METRICS: u32 = 64;
const SIM_USER: &str = "adversary";
const SIM_COHORT: &str = "simulated";

/// Panel of count-above-threshold metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricPanel {
    pub n_metrics: u32,
    /// sd of the per-cohort shift of each metric's mean, in member-sd units
    pub cohort_shift_sd: f64,
    /// thresholds are spread evenly over `[-spread, spread]` member sds
    pub threshold_spread: f64,
}

impl Default for MetricPanel {
    fn default() -> Self {
        Self {
            n_metrics: 32,
            cohort_shift_sd: 0.5,
            threshold_spread: 0.5,
        }
    }
}

impl MetricPanel {
    pub fn threshold(&self, metric: u32) -> f64 {
        if self.n_metrics <= 1 {
            return 0.0;
        }
        -self.threshold_spread + 2.0 * self.threshold_spread * metric as f64 / (self.n_metrics - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub k_min: u64,
    /// defaults to `10 * k_min`
    pub k_max: Option<u64>,
    pub epsilon: f64,
    pub lambda_join: f64,
    pub p_churn: f64,
    pub known_fraction: f64,
    pub query_correlation: f64,
    pub horizon_days: u32,
    pub n_sim: u64,
    pub seed: u64,
    pub queries_per_day: u32,
    /// hard per-day ceiling on admitted queries
    pub q_max: u32,
    pub decoys: u32,
    pub panel: MetricPanel,
    pub metric: MetricModel,
    pub utility_repetitions: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            k_min: 100,
            k_max: None,
            epsilon: 0.3,
            lambda_join: crate::cohort::DEFAULT_LAMBDA_JOIN,
            p_churn: crate::cohort::DEFAULT_P_CHURN,
            known_fraction: 0.1,
            query_correlation: 0.0,
            horizon_days: 365,
            n_sim: 10_000,
            seed: 0,
            queries_per_day: 1,
            q_max: DEFAULT_Q_MAX,
            decoys: 999,
            panel: MetricPanel::default(),
            metric: MetricModel::default(),
            utility_repetitions: 100,
        }
    }
}

impl SimulationConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn k_max(&self) -> u64 {
        self.k_max.unwrap_or(10 * self.k_min)
    }

    /// Copy with every defaulted field made explicit.
    pub fn resolved(&self) -> Self {
        Self {
            k_max: Some(self.k_max()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 {
            return Err(invalid("k_min", "must be positive"));
        }
        if self.k_max() < self.k_min {
            return Err(invalid(
                "k_max",
                format!("{} < k_min {}", self.k_max(), self.k_min),
            ));
        }
        require_positive("epsilon", self.epsilon)?;
        if !(self.lambda_join >= 0.0 && self.lambda_join.is_finite()) {
            return Err(invalid("lambda_join", "must be finite and >= 0"));
        }
        require_probability("p_churn", self.p_churn)?;
        require_probability("known_fraction", self.known_fraction)?;
        if !(0.0..1.0).contains(&self.query_correlation) {
            return Err(invalid("query_correlation", "must lie in [0, 1)"));
        }
        if self.n_sim == 0 {
            return Err(invalid("n_sim", "must be positive"));
        }
        if self.queries_per_day == 0 {
            return Err(invalid("queries_per_day", "must be positive"));
        }
        if self.q_max == 0 {
            return Err(invalid("q_max", "must be positive"));
        }
        if self.decoys == 0 {
            return Err(invalid("decoys", "need at least one decoy"));
        }
        if !(1..=MAX_METRICS).contains(&self.panel.n_metrics) {
            return Err(invalid(
                "panel.n_metrics",
                format!("must lie in 1..={MAX_METRICS}"),
            ));
        }
        require_positive("panel.cohort_shift_sd", self.panel.cohort_shift_sd)?;
        if !(self.panel.threshold_spread >= 0.0 && self.panel.threshold_spread.is_finite()) {
            return Err(invalid("panel.threshold_spread", "must be finite and >= 0"));
        }
        require_positive("metric.sd", self.metric.sd)?;
        Ok(())
    }
}

/// Query drawn by the generator: a count above threshold on one metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimQuery {
    pub t: u32,
    pub metric: u32,
}

impl SimQuery {
    pub fn descriptor(&self, panel: &MetricPanel) -> QueryDescriptor {
        QueryDescriptor::new(
            SIM_COHORT,
            format!("m{}", self.metric),
            "count_above",
            [(
                "threshold".to_string(),
                format!("{}", panel.threshold(self.metric)),
            )],
        )
    }
}

/// With probability `rho` repeats the previous query's metric, otherwise
/// draws one uniformly from `n_metrics`. Both draws are always consumed so
/// runs with different `rho` stay aligned.
pub fn generate_query<R: Rng + ?Sized>(
    t: u32,
    previous: Option<SimQuery>,
    rho: f64,
    n_metrics: u32,
    rng: &mut R,
) -> Result<SimQuery> {
    if !(0.0..1.0).contains(&rho) {
        return Err(invalid("rho", "must lie in [0, 1)"));
    }
    if n_metrics == 0 {
        return Err(invalid("n_metrics", "must be positive"));
    }
    let repeat = rng.random::<f64>() < rho;
    let fresh = rng.random_range(0..n_metrics);
    let metric = match previous {
        Some(p) if repeat => p.metric,
        _ => fresh,
    };
    Ok(SimQuery { t, metric })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayStatus {
    /// at least one fresh release reached the adversary
    Released,
    /// every admitted query was answered from the same-day cache
    Cached,
    /// the cohort was below `k_min`
    Suppressed,
    /// the rate limiter refused every query
    RateLimited,
    /// a release happened with the target as the only member
    Degenerate,
    /// no query was issued
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrajectory {
    pub run: u64,
    pub losses: Vec<f64>,
    pub cohort_sizes: Vec<u64>,
    pub status: Vec<DayStatus>,
    pub cache: CacheStats,
}

impl LossTrajectory {
    pub fn terminal(&self) -> f64 {
        self.losses.last().copied().unwrap_or(0.0)
    }

    /// Loss after `day` days (0 before any observation).
    pub fn loss_at(&self, day: u32) -> f64 {
        match day {
            0 => 0.0,
            d => self.losses[(d as usize).min(self.losses.len()) - 1],
        }
    }

    pub fn degenerate(&self) -> bool {
        self.status.contains(&DayStatus::Degenerate)
    }
}

/// Present cohort members other than the target.
struct Members {
    m: usize,
    values: Vec<f64>,
    masks: Vec<u64>,
    known: Vec<bool>,
    above: Vec<i64>,
    known_above: Vec<i64>,
    known_sum: Vec<f64>,
    n_known: i64,
}

impl Members {
    fn new(m: usize, capacity: usize) -> Self {
        Self {
            m,
            values: Vec::with_capacity(capacity * m),
            masks: Vec::with_capacity(capacity),
            known: Vec::with_capacity(capacity),
            above: vec![0; m],
            known_above: vec![0; m],
            known_sum: vec![0.0; m],
            n_known: 0,
        }
    }

    fn len(&self) -> usize {
        self.masks.len()
    }

    fn push(&mut self, row: &[f64], thresholds: &[f64], known: bool) {
        let mut mask = 0u64;
        for (j, (&v, &th)) in row.iter().zip(thresholds).enumerate() {
            let bit = v > th;
            mask |= u64::from(bit) << j;
            self.above[j] += i64::from(bit);
            if known {
                self.known_above[j] += i64::from(bit);
                self.known_sum[j] += v;
            }
        }
        self.n_known += i64::from(known);
        self.values.extend_from_slice(row);
        self.masks.push(mask);
        self.known.push(known);
    }

    fn set_known(&mut self, i: usize) {
        if self.known[i] {
            return;
        }
        self.known[i] = true;
        self.n_known += 1;
        for j in 0..self.m {
            let bit = (self.masks[i] >> j) & 1;
            self.known_above[j] += bit as i64;
            self.known_sum[j] += self.values[i * self.m + j];
        }
    }

    fn swap_remove(&mut self, i: usize) {
        let mask = self.masks[i];
        let known = self.known[i];
        for j in 0..self.m {
            let bit = ((mask >> j) & 1) as i64;
            self.above[j] -= bit;
            if known {
                self.known_above[j] -= bit;
                self.known_sum[j] -= self.values[i * self.m + j];
            }
        }
        self.n_known -= i64::from(known);
        let last = self.len() - 1;
        if i != last {
            let (head, tail) = self.values.split_at_mut(last * self.m);
            head[i * self.m..(i + 1) * self.m].copy_from_slice(&tail[..self.m]);
        }
        self.values.truncate(last * self.m);
        self.masks.swap_remove(i);
        self.known.swap_remove(i);
    }

    fn known_summary(&self, j: usize) -> KnownSummary {
        KnownSummary {
            n_known: self.n_known as u64,
            above: self.known_above[j] as u64,
            value_sum: self.known_sum[j],
        }
    }
}

fn draw_row<R: Rng + ?Sized>(shift: &[f64], row: &mut [f64], rng: &mut R) {
    for (v, mu) in row.iter_mut().zip(shift) {
        let z: f64 = StandardNormal.sample(rng);
        *v = mu + z;
    }
}

/// Simulates run `run` of `config`; a pure function of `(config, run)`.
pub fn simulate_run(config: &SimulationConfig, run: u64) -> Result<LossTrajectory> {
    let seed = config.seed;
    let mut cohort_rng = stream(seed, run, Component::Cohort);
    let mut knowledge_rng = stream(seed, run, Component::Knowledge);
    let mut dynamics_rng = stream(seed, run, Component::Dynamics);
    let mut query_rng = stream(seed, run, Component::Queries);
    let mut noise_rng = stream(seed, run, Component::Noise);
    let mut candidate_rng = stream(seed, run, Component::Candidates);

    let m = config.panel.n_metrics as usize;
    let thresholds: Vec<f64> = (0..config.panel.n_metrics)
        .map(|j| config.panel.threshold(j))
        .collect();
    let tau = config.panel.cohort_shift_sd;
    let predictive = CountPredictive::new(tau)?;
    let noise_scale = 1.0 / config.epsilon;

    // cohort: size, per-metric shift, members; the target is not stored
    let n0 = cohort_rng.random_range(config.k_min..=config.k_max());
    let shift: Vec<f64> = (0..m)
        .map(|_| tau * Distribution::<f64>::sample(&StandardNormal, &mut cohort_rng))
        .collect();
    let mut members = Members::new(m, (n0 as usize).max(64));
    let mut row = vec![0.0; m];
    for _ in 1..n0 {
        draw_row(&shift, &mut row, &mut cohort_rng);
        members.push(&row, &thresholds, false);
    }
    draw_row(&shift, &mut row, &mut cohort_rng);
    let target_mask = row
        .iter()
        .zip(&thresholds)
        .enumerate()
        .fold(0u64, |acc, (j, (v, th))| acc | (u64::from(v > th) << j));

    // knowledge: nested prefixes of one permutation, so larger fractions
    // extend smaller ones
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.shuffle(&mut knowledge_rng);
    let n_known = ((config.known_fraction * n0 as f64).floor() as usize).min(members.len());
    for &i in &order[..n_known] {
        members.set_known(i);
    }

    // candidates: the target (index 0) and decoys from the same population
    let n_candidates = config.decoys as usize + 1;
    let mut candidate_bits = vec![vec![false; n_candidates]; m];
    for c in 0..n_candidates {
        let mask = if c == 0 {
            target_mask
        } else {
            draw_row(&shift, &mut row, &mut candidate_rng);
            row.iter()
                .zip(&thresholds)
                .enumerate()
                .fold(0u64, |acc, (j, (v, th))| acc | (u64::from(v > th) << j))
        };
        for (j, bits) in candidate_bits.iter_mut().enumerate() {
            bits[c] = (mask >> j) & 1 == 1;
        }
    }
    let mut belief = AdversaryBelief::uniform(n_candidates)?;
    let prior = 1.0 / n_candidates as f64;

    let limiter = RateLimiter::new(config.q_max, 1)?;
    let cache = ResultCache::new();
    let days = config.horizon_days as usize;
    let mut losses = Vec::with_capacity(days);
    let mut sizes = Vec::with_capacity(days);
    let mut status = Vec::with_capacity(days);
    let mut loss = 0.0;
    let mut previous: Option<SimQuery> = None;

    for t in 1..=config.horizon_days {
        // dynamics: every non-target member leaves with probability p_churn
        for i in (0..members.len()).rev() {
            if dynamics_rng.random::<f64>() < config.p_churn {
                members.swap_remove(i);
            }
        }
        let joins = crate::cohort::draw_joins(config.lambda_join, &mut dynamics_rng)?;
        for _ in 0..joins {
            draw_row(&shift, &mut row, &mut dynamics_rng);
            let known = knowledge_rng.random::<f64>() < config.known_fraction;
            members.push(&row, &thresholds, known);
        }
        let size = members.len() as u64 + 1;
        cache.evict_before(u64::from(t));

        let mut day = DayStatus::Idle;
        let mut updated = false;
        for _ in 0..config.queries_per_day {
            let query = generate_query(
                t,
                previous,
                config.query_correlation,
                config.panel.n_metrics,
                &mut query_rng,
            )?;
            previous = Some(query);
            let u = open_unit(&mut noise_rng);
            if limiter.check_rate(SIM_USER, u64::from(t)) == RateDecision::Deny {
                if day == DayStatus::Idle {
                    day = DayStatus::RateLimited;
                }
                continue;
            }
            if gate_size(size, config.k_min) == GateDecision::Suppress {
                day = DayStatus::Suppressed;
                continue;
            }
            let j = query.metric as usize;
            let true_count = (members.above[j] as f64) + f64::from(u8::from((target_mask >> j) & 1 == 1));
            let (release, outcome) =
                cache.cached_release(&query.descriptor(&config.panel), u64::from(t), || {
                    laplace_release(true_count, Sensitivity::COUNT, config.epsilon, u)
                })?;
            if outcome == CacheOutcome::Hit {
                if matches!(day, DayStatus::Idle | DayStatus::RateLimited) {
                    day = DayStatus::Cached;
                }
                continue;
            }
            let n_unknown = size - 1 - members.n_known as u64;
            let (mean, variance) = predictive.predict(members.known_summary(j), n_unknown, thresholds[j]);
            let increments = CountPredictive::log_likelihoods(release.value, noise_scale, mean, variance);
            belief.update_binary(&candidate_bits[j], increments)?;
            updated = true;
            if day != DayStatus::Degenerate {
                day = if size == 1 {
                    DayStatus::Degenerate
                } else {
                    DayStatus::Released
                };
            }
        }
        if updated {
            loss = loss_from_posterior(belief.posterior(0)?, prior)?;
        }
        losses.push(loss);
        sizes.push(size);
        status.push(day);
    }

    Ok(LossTrajectory {
        run,
        losses,
        cohort_sizes: sizes,
        status,
        cache: cache.stats(),
    })
}

/// Runs `n_sim` independent trajectories in parallel on the current rayon
/// pool. Output order is by run index regardless of scheduling.
pub fn run_simulation(config: &SimulationConfig) -> Result<Vec<LossTrajectory>> {
    config.validate()?;
    (0..config.n_sim)
        .into_par_iter()
        .map(|run| simulate_run(config, run))
        .collect()
}

fn sorted_losses(losses: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(invalid("losses", "empty sample"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    if losses.iter().any(|l| l.is_nan()) {
        return Err(invalid("losses", "NaN in sample"));
    }
    let mut s = losses.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

fn order_statistic(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    // tolerate representation error in alpha * n, e.g. 0.95 * 100
    let k = ((alpha * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(n) - 1]
}

/// Empirical alpha-quantile: the order statistic at 1-based index `ceil(alpha n)`.
pub fn p_var(losses: &[f64], alpha: f64) -> Result<f64> {
    let s = sorted_losses(losses, alpha)?;
    Ok(order_statistic(&s, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMean {
    pub value: f64,
    /// true when no loss exceeds P-VaR and the value falls back to it
    pub degenerate_tail: bool,
}

/// Mean of losses strictly above P-VaR at `alpha`.
pub fn cp_var(losses: &[f64], alpha: f64) -> Result<TailMean> {
    let s = sorted_losses(losses, alpha)?;
    let var = order_statistic(&s, alpha);
    let start = s.partition_point(|l| *l <= var);
    let tail = &s[start..];
    if tail.is_empty() {
        return Ok(TailMean {
            value: var,
            degenerate_tail: true,
        });
    }
    Ok(TailMean {
        value: tail.iter().sum::<f64>() / tail.len() as f64,
        degenerate_tail: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub p_var_95: f64,
    pub p_var_99: f64,
    pub cp_var_95: f64,
    pub max_loss: f64,
    pub degenerate_tail: bool,
    pub n_sim: u64,
    pub degenerate_runs: u64,
    /// share of run-days on which the cohort was below `k_min`
    pub suppressed_fraction: f64,
    pub cache: CacheStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SimulationConfig>,
    pub code_version: String,
}

/// Tail statistics over a set of terminal losses.
pub fn report_from_losses(terminal: &[f64]) -> Result<RiskReport> {
    let cp = cp_var(terminal, 0.95)?;
    Ok(RiskReport {
        p_var_95: p_var(terminal, 0.95)?,
        p_var_99: p_var(terminal, 0.99)?,
        cp_var_95: cp.value,
        max_loss: terminal.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        degenerate_tail: cp.degenerate_tail,
        n_sim: terminal.len() as u64,
        degenerate_runs: 0,
        suppressed_fraction: 0.0,
        cache: CacheStats::default(),
        utility: None,
        config: None,
        code_version: CODE_VERSION.to_string(),
    })
}

pub fn risk_report(trajectories: &[LossTrajectory]) -> Result<RiskReport> {
    let terminal: Vec<f64> = trajectories.iter().map(LossTrajectory::terminal).collect();
    let mut report = report_from_losses(&terminal)?;
    report.degenerate_runs = trajectories.iter().filter(|t| t.degenerate()).count() as u64;
    let (suppressed, days) = trajectories.iter().fold((0usize, 0usize), |(s, d), t| {
        (
            s + t.status.iter().filter(|x| **x == DayStatus::Suppressed).count(),
            d + t.status.len(),
        )
    });
    report.suppressed_fraction = if days == 0 {
        0.0
    } else {
        suppressed as f64 / days as f64
    };
    report.cache = trajectories
        .iter()
        .fold(CacheStats::default(), |acc, t| CacheStats {
            hits: acc.hits + t.cache.hits,
            misses: acc.misses + t.cache.misses,
        });
    Ok(report)
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    run: u64,
    t: u32,
    loss: f64,
    cohort_size: u64,
    flag: DayStatus,
}

/// CSV with columns `run,t,loss,cohort_size,flag`.
pub fn write_trajectories_csv<W: Write>(writer: W, trajectories: &[LossTrajectory]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    for traj in trajectories {
        for (i, ((loss, size), flag)) in traj
            .losses
            .iter()
            .zip(&traj.cohort_sizes)
            .zip(&traj.status)
            .enumerate()
        {
            w.serialize(TrajectoryRow {
                run: traj.run,
                t: i as u32 + 1,
                loss: *loss,
                cohort_size: *size,
                flag: *flag,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Terminal loss of every run in a trajectory CSV, ordered by run.
pub fn read_terminal_losses(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut last: std::collections::BTreeMap<u64, (u32, f64)> = Default::default();
    for row in reader.deserialize() {
        let row: TrajectoryRow = row?;
        let entry = last.entry(row.run).or_insert((row.t, row.loss));
        if row.t >= entry.0 {
            *entry = (row.t, row.loss);
        }
    }
    Ok(last.into_values().map(|(_, l)| l).collect())
}

pub fn report_json(report: &RiskReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimulationConfig {
        SimulationConfig {
            k_min: 20,
            horizon_days: 30,
            n_sim: 16,
            decoys: 99,
            ..Default::default()
        }
    }

    #[test]
    fn p_var_examples() {
        let l: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(p_var(&l, 0.95).unwrap(), 95.0);
        assert_eq!(p_var(&l, 0.99).unwrap(), 99.0);
        assert_eq!(cp_var(&l, 0.95).unwrap().value, 98.0);
        assert_eq!(p_var(&[2.5; 7], 0.3).unwrap(), 2.5);
        let c = cp_var(&[2.5; 7], 0.95).unwrap();
        assert!(c.degenerate_tail && c.value == 2.5);
        assert!(p_var(&[], 0.95).is_err());
        assert!(p_var(&[1.0], 1.0).is_err());
    }

    #[test]
    fn report_examples() {
        let l: Vec<f64> = (1..=100).map(f64::from).collect();
        let r = report_from_losses(&l).unwrap();
        assert_eq!(
            (r.p_var_95, r.p_var_99, r.cp_var_95, r.max_loss),
            (95.0, 99.0, 98.0, 100.0)
        );
        let r = report_from_losses(&[0.7]).unwrap();
        assert_eq!(
            (r.p_var_95, r.p_var_99, r.cp_var_95, r.max_loss),
            (0.7, 0.7, 0.7, 0.7)
        );
    }

    #[test]
    fn zero_horizon_gives_zero_loss() {
        let cfg = SimulationConfig {
            horizon_days: 0,
            ..small()
        };
        let trajs = run_simulation(&cfg).unwrap();
        assert!(trajs.iter().all(|t| t.losses.is_empty() && t.terminal() == 0.0));
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = small();
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(simulate_run(&cfg, 5).unwrap(), a[5]);
    }

    #[test]
    fn per_day_increment_bounded_by_epsilon() {
        let cfg = SimulationConfig {
            epsilon: 1.0,
            ..small()
        };
        for traj in run_simulation(&cfg).unwrap() {
            let mut prev = 0.0;
            for l in &traj.losses {
                assert!((l - prev).abs() <= cfg.epsilon + 1e-9);
                prev = *l;
            }
        }
    }

    #[test]
    fn suppressed_days_carry_no_information() {
        // k_min above any reachable size: nothing is ever released
        let cfg = SimulationConfig {
            k_min: 20,
            k_max: Some(20),
            lambda_join: 0.0,
            p_churn: 0.5,
            ..small()
        };
        for traj in run_simulation(&cfg).unwrap() {
            let first_suppressed = traj
                .status
                .iter()
                .position(|s| *s == DayStatus::Suppressed)
                .unwrap();
            let frozen = traj.losses[first_suppressed];
            assert!(traj.losses[first_suppressed..].iter().all(|l| *l == frozen));
        }
    }

    #[test]
    fn repeated_daily_queries_hit_cache() {
        let cfg = SimulationConfig {
            queries_per_day: 4,
            query_correlation: 0.99,
            ..small()
        };
        let trajs = run_simulation(&cfg).unwrap();
        let report = risk_report(&trajs).unwrap();
        assert!(report.cache.hits > 0);
    }

    #[test]
    fn q_max_caps_daily_queries() {
        let cfg = SimulationConfig {
            queries_per_day: 5,
            q_max: 2,
            ..small()
        };
        let trajs = run_simulation(&cfg).unwrap();
        let r = risk_report(&trajs).unwrap();
        let days = cfg.horizon_days as u64 * cfg.n_sim;
        assert!(r.cache.hits + r.cache.misses <= 2 * days);
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let err = SimulationConfig::from_json(r#"{"k_min": 50, "epsilonn": 0.3}"#).unwrap_err();
        assert!(err.to_string().contains("epsilonn"), "{err}");
        let cfg = SimulationConfig::from_json(r#"{"k_min": 50}"#).unwrap();
        assert_eq!(cfg.k_max(), 500);
        assert!(SimulationConfig::from_json(r#"{"k_min": 50, "k_max": 10}"#).is_err());
        assert!(SimulationConfig::from_json(r#"{"query_correlation": 1.0}"#).is_err());
    }

    #[test]
    fn query_generator_repeats() {
        let mut rng = crate::rng::seeded(3);
        let mut prev = None;
        let mut repeats = 0;
        let n = 100_000;
        for t in 0..n {
            let q = generate_query(t, prev, 0.99, 32, &mut rng).unwrap();
            if prev.is_some_and(|p: SimQuery| p.metric == q.metric) {
                repeats += 1;
            }
            prev = Some(q);
        }
        let rate = repeats as f64 / (n - 1) as f64;
        // fresh draws land on the same metric 1/32 of the time
        let want = 0.99 + 0.01 / 32.0;
        assert!((rate - want).abs() < 0.01, "{rate}");
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let trajs = run_simulation(&small()).unwrap();
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &trajs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("run,t,loss,cohort_size,flag\n"));
        assert!(!text.contains('\r'));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, &text).unwrap();
        let terminal = read_terminal_losses(&path).unwrap();
        let want: Vec<f64> = trajs.iter().map(LossTrajectory::terminal).collect();
        assert_eq!(terminal, want);
    }
}
