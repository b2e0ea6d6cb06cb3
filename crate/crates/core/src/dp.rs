//! Laplace mechanism, clipping and sensitivity bookkeeping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityKind {
    Count,
    ClippedMean,
    ClippedQuantile,
}

/// Global sensitivity of a statistic, in the statistic's own units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    value: f64,
    kind: SensitivityKind,
}

impl Sensitivity {
    /// Sensitivity of a counting query.
    pub const COUNT: Sensitivity = Sensitivity {
        value: 1.0,
        kind: SensitivityKind::Count,
    };

    pub fn new(value: f64, kind: SensitivityKind) -> Result<Self> {
        require_positive("sensitivity", value)?;
        if kind == SensitivityKind::Count && value != 1.0 {
            return Err(invalid("sensitivity", "count queries have sensitivity 1"));
        }
        Ok(Self { value, kind })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn kind(&self) -> SensitivityKind {
        self.kind
    }
}

/// Closed clipping interval `[lower, upper]` with `lower < upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds")]
pub struct ClipBounds {
    lower: f64,
    upper: f64,
}

#[derive(Deserialize)]
struct RawBounds {
    lower: f64,
    upper: f64,
}

impl TryFrom<RawBounds> for ClipBounds {
    type Error = crate::Error;

    fn try_from(raw: RawBounds) -> Result<Self> {
        ClipBounds::new(raw.lower, raw.upper)
    }
}

impl ClipBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(invalid(
                "bounds",
                format!("need finite lower < upper, got [{lower}, {upper}]"),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Laplace,
}

/// Output of a DP mechanism.
///
/// In simulation mode the true value is retained next to the release so the
/// adversary model can evaluate likelihoods; production releases drop it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyRelease {
    pub value: f64,
    pub epsilon_spent: f64,
    pub mechanism: Mechanism,
    true_value: Option<f64>,
}

impl NoisyRelease {
    pub fn true_value_hidden(&self) -> bool {
        self.true_value.is_none()
    }

    /// The un-noised statistic, available only in simulation mode.
    pub fn true_value(&self) -> Option<f64> {
        self.true_value
    }

    /// Drops the true value, turning a simulation release into a production one.
    pub fn into_production(self) -> Self {
        Self {
            true_value: None,
            ..self
        }
    }
}

/// Laplace(0, scale) quantile function evaluated at `u` in (0, 1).
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    if u < 0.5 {
        scale * (2.0 * u).ln()
    } else {
        -scale * (2.0 * (1.0 - u)).ln()
    }
}

/// Uniform draw on the open interval (0, 1) from 53 random bits.
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let bits = rng.next_u64() >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// One Laplace(0, scale) draw via the inverse CDF of a single uniform.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    require_positive("scale", scale)?;
    Ok(laplace_inverse_cdf(open_unit(rng), scale))
}

/// Log density of Laplace(0, scale) at `x`.
pub fn laplace_log_density(x: f64, scale: f64) -> f64 {
    -(2.0 * scale).ln() - x.abs() / scale
}

/// Releases `true_value + Lap(sensitivity / epsilon)`.
pub fn laplace_mechanism<R: Rng + ?Sized>(
    true_value: f64,
    sensitivity: Sensitivity,
    epsilon: f64,
    rng: &mut R,
) -> Result<NoisyRelease> {
    laplace_release(true_value, sensitivity, epsilon, open_unit(rng))
}

/// [`laplace_mechanism`] with the uniform input supplied by the caller.
pub fn laplace_release(
    true_value: f64,
    sensitivity: Sensitivity,
    epsilon: f64,
    u: f64,
) -> Result<NoisyRelease> {
    require_positive("epsilon", epsilon)?;
    require_positive("sensitivity", sensitivity.value())?;
    if !(u > 0.0 && u < 1.0) {
        return Err(invalid("u", format!("uniform input must lie in (0, 1), got {u}")));
    }
    let noise = laplace_inverse_cdf(u, sensitivity.value() / epsilon);
    Ok(NoisyRelease {
        value: true_value + noise,
        epsilon_spent: epsilon,
        mechanism: Mechanism::Laplace,
        true_value: Some(true_value),
    })
}

pub fn clip(values: &[f64], bounds: ClipBounds) -> Vec<f64> {
    values.iter().map(|&v| bounds.clamp(v)).collect()
}

/// Sensitivity of the mean of `n` values clipped to `bounds`.
pub fn clipped_mean_sensitivity(bounds: ClipBounds, n: u64) -> Result<Sensitivity> {
    if n == 0 {
        return Err(invalid("n", "mean over zero records"));
    }
    Sensitivity::new(bounds.width() / n as f64, SensitivityKind::ClippedMean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn inverse_cdf_median_is_zero() {
        assert_eq!(laplace_inverse_cdf(0.5, 2.0), 0.0);
    }

    #[test]
    fn sample_rejects_bad_scale() {
        let mut rng = seeded(1);
        assert!(sample_laplace(0.0, &mut rng).is_err());
        assert!(sample_laplace(-1.0, &mut rng).is_err());
        assert!(sample_laplace(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn laplace_moments() {
        // variance of Laplace(b) is 2 b^2 = 8 for b = 2
        let mut rng = seeded(42);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_laplace(2.0, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 8.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn same_seed_bit_identical() {
        let mut a = seeded(9);
        let mut b = seeded(9);
        for _ in 0..1000 {
            let x = sample_laplace(1.5, &mut a).unwrap();
            let y = sample_laplace(1.5, &mut b).unwrap();
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn mechanism_validates_inputs() {
        let mut rng = seeded(3);
        assert!(laplace_mechanism(1.0, Sensitivity::COUNT, 0.0, &mut rng).is_err());
        assert!(laplace_mechanism(1.0, Sensitivity::COUNT, -0.5, &mut rng).is_err());
        assert!(Sensitivity::new(0.0, SensitivityKind::ClippedMean).is_err());
        assert!(Sensitivity::new(2.0, SensitivityKind::Count).is_err());
    }

    #[test]
    fn count_release_within_tail_bound() {
        // P(|Lap(2)| > 40) = exp(-20) ~ 2e-9
        let mut rng = seeded(5);
        for _ in 0..100_000 {
            let r = laplace_mechanism(50.0, Sensitivity::COUNT, 0.5, &mut rng).unwrap();
            assert!((10.0..=90.0).contains(&r.value));
            assert_eq!(r.epsilon_spent, 0.5);
            assert_eq!(r.true_value(), Some(50.0));
        }
    }

    #[test]
    fn huge_epsilon_approaches_true_value() {
        let mut rng = seeded(6);
        let r = laplace_mechanism(50.0, Sensitivity::COUNT, 1e12, &mut rng).unwrap();
        assert!((r.value - 50.0).abs() < 1e-9);
    }

    #[test]
    fn production_release_hides_truth() {
        let mut rng = seeded(6);
        let r = laplace_mechanism(5.0, Sensitivity::COUNT, 1.0, &mut rng).unwrap();
        assert!(!r.true_value_hidden());
        let p = r.into_production();
        assert!(p.true_value_hidden());
        assert_eq!(p.value, r.value);
    }

    #[test]
    fn clip_examples() {
        let b = ClipBounds::new(0.0, 10.0).unwrap();
        assert_eq!(clip(&[-5.0, 3.0, 12.0], b), vec![0.0, 3.0, 10.0]);
        assert_eq!(clip(&[1.0, 2.0, 9.5], b), vec![1.0, 2.0, 9.5]);
        assert!(clip(&[], b).is_empty());
        assert!(ClipBounds::new(1.0, 1.0).is_err());
    }

    #[test]
    fn clipped_mean_examples() {
        let s = clipped_mean_sensitivity(ClipBounds::new(0.0, 100.0).unwrap(), 100).unwrap();
        assert_eq!(s.value(), 1.0);
        assert_eq!(s.kind(), SensitivityKind::ClippedMean);
        let s = clipped_mean_sensitivity(ClipBounds::new(0.0, 1.0).unwrap(), 1).unwrap();
        assert_eq!(s.value(), 1.0);
        let s = clipped_mean_sensitivity(ClipBounds::new(0.0, 10.0).unwrap(), 200).unwrap();
        assert!((s.value() - 0.05).abs() < 1e-15);
        assert!(clipped_mean_sensitivity(ClipBounds::new(0.0, 10.0).unwrap(), 0).is_err());
    }

    #[test]
    fn bounds_reject_inverted_json() {
        let ok: ClipBounds = serde_json::from_str(r#"{"lower":0,"upper":1}"#).unwrap();
        assert_eq!(ok.width(), 1.0);
        assert!(serde_json::from_str::<ClipBounds>(r#"{"lower":2,"upper":1}"#).is_err());
    }

    proptest! {
        #[test]
        fn clip_is_idempotent_and_in_range(
            values in prop::collection::vec(-1e6f64..1e6, 0..64),
            lo in -100.0f64..100.0,
            width in 0.001f64..100.0,
        ) {
            let b = ClipBounds::new(lo, lo + width).unwrap();
            let once = clip(&values, b);
            prop_assert_eq!(once.len(), values.len());
            prop_assert!(once.iter().all(|v| *v >= b.lower() && *v <= b.upper()));
            prop_assert_eq!(clip(&once, b), once.clone());
            for (orig, c) in values.iter().zip(&once) {
                if *orig >= b.lower() && *orig <= b.upper() {
                    prop_assert_eq!(orig, c);
                }
            }
        }
    }
}
