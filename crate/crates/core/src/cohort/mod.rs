//! Cohort taxonomy, size dynamics, gating and quantile aggregation.

mod dynamics;
mod sketch;
mod state;
mod taxonomy;

pub use dynamics::{draw_churn, draw_joins, step_dynamics, DEFAULT_LAMBDA_JOIN, DEFAULT_P_CHURN};
pub use sketch::{target_rank, QuantileSketch};
pub use state::{
    attribute_entropy, gate_release, gate_size, suppress_rare_attributes, CohortState, GateDecision,
    DEFAULT_MIN_COUNT, OTHER_BUCKET,
};
pub use taxonomy::{AgeBin, CohortKey, Sex, Taxonomy, UserAttributes, MAX_AGE, NO_CONDITION};
