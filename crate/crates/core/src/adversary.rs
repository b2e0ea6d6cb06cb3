//! Bayesian membership-inference adversary.
//!
//! The adversary holds a candidate set (target plus decoys), a prior over
//! which candidate is the cohort member, and accumulates per-candidate log
//! likelihoods of each noisy release. Posteriors are the normalized product
//! of prior and likelihoods, so updates commute.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortState;
use crate::dp::{laplace_log_density, ClipBounds, NoisyRelease};
use crate::error::{invalid, require_positive, require_probability, Error, Result};
use crate::numeric::{laplace_normal_log_density, log_sum_exp, normal_cdf, orthant_covariance};

pub const POSTERIOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownIndividual {
    pub id: u64,
    /// attribute values the adversary holds for this member
    pub attributes: Vec<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BackgroundKnowledge {
    pub known: Vec<KnownIndividual>,
    pub known_fraction: f64,
}

impl BackgroundKnowledge {
    pub fn contains(&self, id: u64) -> bool {
        self.known.iter().any(|k| k.id == id)
    }
}

/// Marks a uniform random `floor(fraction * N)` members as known with
/// certainty. Member ids are indices into `cohort.member_values`; the target,
/// if any, is never marked, so at most `N - 1` members become known.
pub fn init_knowledge<R: Rng + ?Sized>(
    cohort: &CohortState,
    known_fraction: f64,
    target: Option<u64>,
    rng: &mut R,
) -> Result<BackgroundKnowledge> {
    require_probability("known_fraction", known_fraction)?;
    let n = cohort.size();
    let mut pool: Vec<u64> = (0..n).filter(|id| Some(*id) != target).collect();
    let wanted = ((known_fraction * n as f64).floor() as usize).min(pool.len());
    let (chosen, _) = pool.partial_shuffle(rng, wanted);
    let mut known: Vec<KnownIndividual> = chosen
        .iter()
        .map(|&id| KnownIndividual {
            id,
            attributes: cohort
                .member_values
                .get(id as usize)
                .map(|v| vec![*v])
                .unwrap_or_default(),
            confidence: 1.0,
        })
        .collect();
    known.sort_by_key(|k| k.id);
    Ok(BackgroundKnowledge {
        known,
        known_fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    TargetInCohort,
    TargetNotInCohort,
}

/// Statistic whose release the adversary observes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Statistic {
    Count,
    ClippedMean { bounds: ClipBounds },
}

impl Statistic {
    fn evaluate(&self, values: impl Iterator<Item = f64>) -> Option<f64> {
        match self {
            Statistic::Count => Some(values.count() as f64),
            Statistic::ClippedMean { bounds } => {
                let (mut sum, mut n) = (0.0, 0usize);
                for v in values {
                    sum += bounds.clamp(v);
                    n += 1;
                }
                (n > 0).then(|| sum / n as f64)
            }
        }
    }

    fn sensitivity(&self, n: usize) -> f64 {
        match self {
            Statistic::Count => 1.0,
            Statistic::ClippedMean { bounds } => bounds.width() / n.max(1) as f64,
        }
    }
}

/// Log density of `release` when the true statistic is computed with the
/// target (member `target`) included or excluded.
///
/// This is the full-information adversary: every non-target value in the
/// cohort is treated as known. The knowledge-limited model used by the risk
/// engine is [`CountPredictive`].
pub fn observation_log_likelihood(
    release: &NoisyRelease,
    hypothesis: Hypothesis,
    cohort: &CohortState,
    target: u64,
    statistic: Statistic,
) -> Result<f64> {
    let values = &cohort.member_values;
    if target as usize >= values.len() {
        return Err(invalid("target", "not a member of the cohort snapshot"));
    }
    let included = values.len();
    let stat = match hypothesis {
        Hypothesis::TargetInCohort => statistic.evaluate(values.iter().copied()),
        Hypothesis::TargetNotInCohort => statistic.evaluate(
            values
                .iter()
                .enumerate()
                .filter(|(i, _)| *i as u64 != target)
                .map(|(_, v)| *v),
        ),
    }
    .ok_or_else(|| Error::DegenerateCohort("statistic undefined once the target is excluded".into()))?;
    let scale = statistic.sensitivity(included) / release.epsilon_spent;
    Ok(laplace_log_density(release.value - stat, scale))
}

pub fn observation_likelihood(
    release: &NoisyRelease,
    hypothesis: Hypothesis,
    cohort: &CohortState,
    target: u64,
    statistic: Statistic,
) -> Result<f64> {
    observation_log_likelihood(release, hypothesis, cohort, target, statistic).map(f64::exp)
}

/// Adversary's predictive model for a count-above-threshold release when only
/// some members are known.
///
/// Member values are standardized scores `v ~ Normal(mu, 1)` with a cohort
/// shift `mu ~ Normal(0, tau^2)` unknown to the adversary. Known members give
/// both their exact contribution to the count and a conjugate estimate of
/// `mu`; unknown members contribute a count whose predictive variance keeps
/// the covariance induced by the shared, uncertain `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountPredictive {
    pub tau: f64,
}

/// What the adversary holds about one metric among currently present members.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KnownSummary {
    pub n_known: u64,
    /// known members above the threshold
    pub above: u64,
    /// sum of known members' standardized values
    pub value_sum: f64,
}

impl CountPredictive {
    pub fn new(tau: f64) -> Result<Self> {
        require_positive("tau", tau)?;
        Ok(Self { tau })
    }

    /// Mean and variance of the count among `n_unknown` unknown members plus
    /// the exactly known contribution.
    pub fn predict(&self, known: KnownSummary, n_unknown: u64, threshold: f64) -> (f64, f64) {
        let precision = 1.0 / (self.tau * self.tau) + known.n_known as f64;
        let post_var = 1.0 / precision;
        let post_mean = known.value_sum / precision;
        let sd = (1.0 + post_var).sqrt();
        let a = (post_mean - threshold) / sd;
        let p = normal_cdf(a);
        let m = n_unknown as f64;
        let cov = orthant_covariance(a, post_var / (1.0 + post_var));
        let mean = known.above as f64 + m * p;
        let variance = m * p * (1.0 - p) + m * (m - 1.0).max(0.0) * cov;
        (mean, variance.max(0.0))
    }

    /// Log likelihood of release `y` if the candidate member is below (index
    /// 0) or above (index 1) the threshold.
    pub fn log_likelihoods(y: f64, noise_scale: f64, mean: f64, variance: f64) -> [f64; 2] {
        [
            laplace_normal_log_density(y - mean, noise_scale, variance),
            laplace_normal_log_density(y - mean - 1.0, noise_scale, variance),
        ]
    }
}

/// Posterior over "which candidate is the cohort member".
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryBelief {
    ids: Vec<u64>,
    log_priors: Vec<f64>,
    priors: Vec<f64>,
    /// accumulated log likelihoods
    scores: Vec<f64>,
}

impl AdversaryBelief {
    pub fn new(ids: Vec<u64>, priors: Vec<f64>) -> Result<Self> {
        if ids.is_empty() || ids.len() != priors.len() {
            return Err(invalid("priors", "need one prior per candidate"));
        }
        if priors.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(invalid("priors", "every prior must lie in (0, 1]"));
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("priors", format!("priors sum to {total}")));
        }
        Ok(Self {
            log_priors: priors.iter().map(|p| p.ln()).collect(),
            scores: vec![0.0; ids.len()],
            ids,
            priors,
        })
    }

    pub fn uniform(n_candidates: usize) -> Result<Self> {
        if n_candidates == 0 {
            return Err(invalid("n_candidates", "need at least one candidate"));
        }
        let p = 1.0 / n_candidates as f64;
        Self::new((0..n_candidates as u64).collect(), vec![p; n_candidates])
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    fn index_of(&self, id: u64) -> Result<usize> {
        self.ids
            .iter()
            .position(|i| *i == id)
            .ok_or_else(|| invalid("id", format!("{id} is not a candidate")))
    }

    pub fn prior(&self, id: u64) -> Result<f64> {
        Ok(self.priors[self.index_of(id)?])
    }

    /// Multiplies in one observation given as per-candidate densities.
    pub fn update(&mut self, likelihoods: &[f64]) -> Result<()> {
        if likelihoods.len() != self.len() {
            return Err(invalid("likelihoods", "one likelihood per candidate"));
        }
        if likelihoods.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(invalid("likelihoods", "must be finite and non-negative"));
        }
        if likelihoods.iter().all(|l| *l == 0.0) {
            return Err(Error::NumericalDegeneracy("all likelihoods are zero".into()));
        }
        for (s, l) in self.scores.iter_mut().zip(likelihoods) {
            *s += l.ln();
        }
        Ok(())
    }

    /// Log-space variant of [`update`](Self::update).
    pub fn update_log(&mut self, log_likelihoods: &[f64]) -> Result<()> {
        if log_likelihoods.len() != self.len() {
            return Err(invalid("likelihoods", "one likelihood per candidate"));
        }
        if log_likelihoods.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::NumericalDegeneracy("non-finite log likelihood".into()));
        }
        if log_likelihoods.iter().all(|l| *l == f64::NEG_INFINITY) {
            return Err(Error::NumericalDegeneracy("all likelihoods are zero".into()));
        }
        for (s, l) in self.scores.iter_mut().zip(log_likelihoods) {
            *s += l;
        }
        Ok(())
    }

    /// Adds `increments[bit]` to each candidate's score, where `bits[i]`
    /// selects the branch for candidate `i`.
    pub fn update_binary(&mut self, bits: &[bool], increments: [f64; 2]) -> Result<()> {
        if bits.len() != self.len() {
            return Err(invalid("bits", "one bit per candidate"));
        }
        if increments.iter().any(|l| !l.is_finite()) {
            return Err(Error::NumericalDegeneracy("non-finite log likelihood".into()));
        }
        for (s, b) in self.scores.iter_mut().zip(bits) {
            *s += increments[usize::from(*b)];
        }
        Ok(())
    }

    fn log_normalizer(&self) -> f64 {
        log_sum_exp(self.log_priors.iter().zip(&self.scores).map(|(p, s)| p + s))
    }

    pub fn posterior(&self, id: u64) -> Result<f64> {
        let i = self.index_of(id)?;
        Ok((self.log_priors[i] + self.scores[i] - self.log_normalizer()).exp())
    }

    pub fn posteriors(&self) -> Vec<f64> {
        let z = self.log_normalizer();
        self.log_priors
            .iter()
            .zip(&self.scores)
            .map(|(p, s)| (p + s - z).exp())
            .collect()
    }
}

/// `ln(posterior / prior)` at day `t`, for the tracked individual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLoss {
    pub value: f64,
    pub individual: u64,
    pub t: u32,
}

/// Loss from a posterior, clamped to `[POSTERIOR_FLOOR, 1 - POSTERIOR_FLOOR]`.
pub fn loss_from_posterior(posterior: f64, prior: f64) -> Result<f64> {
    if !(prior > 0.0 && prior <= 1.0) {
        return Err(invalid("prior", format!("must lie in (0, 1], got {prior}")));
    }
    let p = posterior.clamp(POSTERIOR_FLOOR, 1.0 - POSTERIOR_FLOOR);
    Ok(p.ln() - prior.ln())
}

pub fn privacy_loss(belief: &AdversaryBelief, target: u64, prior: f64, t: u32) -> Result<PrivacyLoss> {
    let value = loss_from_posterior(belief.posterior(target)?, prior)?;
    Ok(PrivacyLoss {
        value,
        individual: target,
        t,
    })
}
