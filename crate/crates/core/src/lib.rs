//! Privacy-loss risk toolkit: DP primitives, budget accounting, cohort
//! simulation, a Bayesian membership adversary and Monte Carlo P-VaR.

pub mod accountant;
pub mod adversary;
pub mod baseline;
pub mod cohort;
pub mod dp;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod numeric;
pub mod rng;
pub mod safeguards;
pub mod utility;

pub use error::{Error, Result};
