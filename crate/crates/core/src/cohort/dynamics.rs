//! Birth-death cohort size process.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::error::{invalid, require_probability, Result};

pub const DEFAULT_LAMBDA_JOIN: f64 = 10.0;
pub const DEFAULT_P_CHURN: f64 = 0.05;

/// Number of arrivals in one step, `Poisson(lambda)`; zero when `lambda == 0`.
pub fn draw_joins<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(
            "lambda_join",
            format!("must be finite and >= 0, got {lambda}"),
        ));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(lambda).map_err(|e| invalid("lambda_join", e.to_string()))?;
    Ok(d.sample(rng) as u64)
}

/// Number of departures among `n` members, `Binomial(n, p)`.
pub fn draw_churn<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> Result<u64> {
    require_probability("p_churn", p)?;
    let d = Binomial::new(n, p).map_err(|e| invalid("p_churn", e.to_string()))?;
    Ok(d.sample(rng))
}

/// `N + Poisson(lambda) - Binomial(N, p)`.
pub fn step_dynamics<R: Rng + ?Sized>(n: u64, lambda: f64, p_churn: f64, rng: &mut R) -> Result<u64> {
    let joins = draw_joins(lambda, rng)?;
    let leaves = draw_churn(n, p_churn, rng)?;
    Ok(n - leaves + joins)
}
