//! Experiment orchestration: single simulations, (k_min, epsilon) sweeps and
//! one-at-a-time sensitivity analysis, with CSV/JSON artifacts.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{
    read_terminal_losses, report_from_losses, report_json, risk_report, run_simulation,
    write_trajectories_csv, LossTrajectory, RiskReport, SimulationConfig,
};
use crate::error::{invalid, Error, Result};
use crate::utility::simulate_utility;

pub const REPORT_FILE: &str = "report.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_PLOT_FILE: &str = "sweep_long.csv";
pub const SENSITIVITY_FILE: &str = "sensitivity.csv";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    pub k_min: Vec<u64>,
    pub epsilon: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityAxes {
    pub known_fraction: Vec<f64>,
    pub p_churn: Vec<f64>,
    pub query_correlation: Vec<f64>,
    pub horizon_days: Vec<u32>,
}

impl SensitivityAxes {
    pub fn is_empty(&self) -> bool {
        self.known_fraction.is_empty()
            && self.p_churn.is_empty()
            && self.query_correlation.is_empty()
            && self.horizon_days.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub base: SimulationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityAxes>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.base_config().validate()?;
        Ok(spec)
    }

    /// Base configuration under the spec's seed.
    pub fn base_config(&self) -> SimulationConfig {
        SimulationConfig {
            seed: self.seed,
            ..self.base.clone()
        }
    }
}

pub fn load_config(path: &Path) -> Result<SimulationConfig> {
    let text = fs::read_to_string(path)?;
    SimulationConfig::from_json(&text).map_err(|e| annotate(path, e))
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)?;
    ExperimentSpec::from_json(&text).map_err(|e| annotate(path, e))
}

fn annotate(path: &Path, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    }
}

pub struct SimulationOutput {
    pub report: RiskReport,
    pub trajectories: Vec<LossTrajectory>,
}

/// Runs every trajectory and builds the report with embedded config and
/// utility at cohort size `k_min`.
pub fn simulate(config: &SimulationConfig) -> Result<SimulationOutput> {
    config.validate()?;
    let trajectories = run_simulation(config)?;
    let mut report = risk_report(&trajectories)?;
    report.utility = Some(simulate_utility(
        &config.metric,
        config.k_min.max(2),
        config.epsilon,
        config.utility_repetitions.max(1),
        config.seed,
    )?);
    report.config = Some(config.resolved());
    Ok(SimulationOutput { report, trajectories })
}

fn lf_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn write_simulation(out: &Path, sim: &SimulationOutput) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(REPORT_FILE), report_json(&sim.report)?)?;
    let file = fs::File::create(out.join(TRAJECTORIES_FILE))?;
    write_trajectories_csv(std::io::BufWriter::new(file), &sim.trajectories)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k_min: u64,
    pub epsilon: f64,
    pub pvar95: f64,
    pub pvar99: f64,
    pub cpvar95: f64,
    pub max: f64,
    pub spearman: f64,
    pub mae_pp: f64,
    pub user_error_rate: f64,
}

/// One row per `(k_min, epsilon)`, ordered by k_min ascending then epsilon
/// descending.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepRow>> {
    let axes = spec
        .sweep
        .as_ref()
        .ok_or_else(|| invalid("sweep", "spec has no sweep axes"))?;
    if axes.k_min.is_empty() || axes.epsilon.is_empty() {
        return Err(invalid("sweep", "axes must be non-empty"));
    }
    let mut cells: Vec<(u64, f64)> = axes
        .k_min
        .iter()
        .flat_map(|&k| axes.epsilon.iter().map(move |&e| (k, e)))
        .collect();
    cells.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
    cells.dedup();
    let configs: Vec<SimulationConfig> = cells
        .iter()
        .map(|&(k_min, epsilon)| {
            let mut c = spec.base_config();
            // a configured k_max belongs to the base k_min; rescale with the axis
            c.k_max = None;
            c.k_min = k_min;
            c.epsilon = epsilon;
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    configs
        .iter()
        .map(|c| {
            let r = risk_report(&run_simulation(c)?)?;
            let u = simulate_utility(
                &c.metric,
                c.k_min.max(2),
                c.epsilon,
                c.utility_repetitions.max(1),
                c.seed,
            )?;
            Ok(SweepRow {
                k_min: c.k_min,
                epsilon: c.epsilon,
                pvar95: r.p_var_95,
                pvar99: r.p_var_99,
                cpvar95: r.cp_var_95,
                max: r.max_loss,
                spearman: u.spearman,
                mae_pp: u.percentile_mae,
                user_error_rate: u.user_error_rate,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub k_min: u64,
    pub epsilon: f64,
    pub measure: String,
    pub value: f64,
}

/// Long-format view of a sweep: one `(k_min, epsilon, measure, value)`
/// observation per row.
pub fn sweep_plot_points(rows: &[SweepRow]) -> Vec<PlotPoint> {
    rows.iter()
        .flat_map(|r| {
            [
                ("pvar95", r.pvar95),
                ("pvar99", r.pvar99),
                ("cpvar95", r.cpvar95),
                ("max", r.max),
                ("spearman", r.spearman),
                ("mae_pp", r.mae_pp),
                ("user_error_rate", r.user_error_rate),
            ]
            .map(|(m, v)| PlotPoint {
                k_min: r.k_min,
                epsilon: r.epsilon,
                measure: m.to_string(),
                value: v,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    KnownFraction,
    PChurn,
    QueryCorrelation,
    HorizonDays,
}

impl Axis {
    fn apply(self, base: &SimulationConfig, value: f64) -> SimulationConfig {
        let mut c = base.clone();
        match self {
            Axis::KnownFraction => c.known_fraction = value,
            Axis::PChurn => c.p_churn = value,
            Axis::QueryCorrelation => c.query_correlation = value,
            Axis::HorizonDays => c.horizon_days = value as u32,
        }
        c
    }

    fn base_value(self, base: &SimulationConfig) -> f64 {
        match self {
            Axis::KnownFraction => base.known_fraction,
            Axis::PChurn => base.p_churn,
            Axis::QueryCorrelation => base.query_correlation,
            Axis::HorizonDays => base.horizon_days as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub axis: Axis,
    pub value: f64,
    pub pvar95: f64,
    pub delta_pct: f64,
}

fn delta_pct(value: f64, base: f64) -> f64 {
    if value == base {
        0.0
    } else {
        100.0 * (value - base) / base
    }
}

/// Varies one axis at a time around the base configuration. Deltas are
/// relative to the base run of this invocation. Every axis reports its
/// baseline value, inserted first when the axis list omits it.
pub fn run_sensitivity(spec: &ExperimentSpec) -> Result<Vec<SensitivityRow>> {
    let axes = spec
        .sensitivity
        .as_ref()
        .filter(|a| !a.is_empty())
        .ok_or_else(|| invalid("sensitivity", "spec has no sensitivity axes"))?;
    let base = spec.base_config();
    base.validate()?;
    let lists: Vec<(Axis, Vec<f64>)> = [
        (Axis::KnownFraction, axes.known_fraction.clone()),
        (Axis::PChurn, axes.p_churn.clone()),
        (Axis::QueryCorrelation, axes.query_correlation.clone()),
        (
            Axis::HorizonDays,
            axes.horizon_days.iter().map(|&h| h as f64).collect(),
        ),
    ]
    .into_iter()
    .filter(|(_, v)| !v.is_empty())
    .map(|(axis, mut values)| {
        let b = axis.base_value(&base);
        if !values.contains(&b) {
            values.insert(0, b);
        }
        (axis, values)
    })
    .collect();
    for (axis, values) in &lists {
        for &v in values {
            axis.apply(&base, v).validate()?;
        }
    }
    let base_pvar = risk_report(&run_simulation(&base)?)?.p_var_95;
    let mut rows = Vec::new();
    for (axis, values) in lists {
        for v in values {
            let pvar95 = if v == axis.base_value(&base) {
                base_pvar
            } else {
                risk_report(&run_simulation(&axis.apply(&base, v))?)?.p_var_95
            };
            rows.push(SensitivityRow {
                axis,
                value: v,
                pvar95,
                delta_pct: delta_pct(pvar95, base_pvar),
            });
        }
    }
    Ok(rows)
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = lf_writer(std::io::BufWriter::new(fs::File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_sweep(out: &Path, rows: &[SweepRow]) -> Result<()> {
    fs::create_dir_all(out)?;
    write_rows(&out.join(SWEEP_FILE), rows)?;
    write_rows(&out.join(SWEEP_PLOT_FILE), &sweep_plot_points(rows))
}

pub fn write_sensitivity(out: &Path, rows: &[SensitivityRow]) -> Result<()> {
    fs::create_dir_all(out)?;
    write_rows(&out.join(SENSITIVITY_FILE), rows)
}

/// Plain-text summary of whatever artifacts `dir` contains. Simulation
/// statistics are recomputed from the trajectory CSV.
pub fn summarize_dir(dir: &Path) -> Result<String> {
    if !dir.is_dir() {
        return Err(Error::Validation(format!("{} is not a directory", dir.display())));
    }
    let mut s = String::new();
    let traj = dir.join(TRAJECTORIES_FILE);
    if traj.exists() {
        let r = report_from_losses(&read_terminal_losses(&traj)?)?;
        writeln!(
            s,
            "simulation: n_sim={} p_var_95={:.4} p_var_99={:.4} cp_var_95={:.4} max={:.4}",
            r.n_sim, r.p_var_95, r.p_var_99, r.cp_var_95, r.max_loss
        )
        .ok();
    }
    let sweep = dir.join(SWEEP_FILE);
    if sweep.exists() {
        writeln!(
            s,
            "sweep:\n  k_min  epsilon   pvar95   pvar99  cpvar95  spearman  mae_pp  uer"
        )
        .ok();
        for r in read_rows::<SweepRow>(&sweep)? {
            writeln!(
                s,
                "  {:>5}  {:>7}  {:>7.3}  {:>7.3}  {:>7.3}  {:>8.3}  {:>6.2}  {:.3}",
                r.k_min, r.epsilon, r.pvar95, r.pvar99, r.cpvar95, r.spearman, r.mae_pp, r.user_error_rate
            )
            .ok();
        }
    }
    let sens = dir.join(SENSITIVITY_FILE);
    if sens.exists() {
        writeln!(s, "sensitivity:").ok();
        for r in read_rows::<SensitivityRow>(&sens)? {
            let axis = serde_json::to_value(r.axis)?;
            writeln!(
                s,
                "  {:<18} {:>7}  pvar95={:.3}  {:+.1}%",
                axis.as_str().unwrap_or_default(),
                r.value,
                r.pvar95,
                r.delta_pct
            )
            .ok();
        }
    }
    if s.is_empty() {
        return Err(Error::Validation(format!(
            "no experiment artifacts in {}",
            dir.display()
        )));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SimulationConfig {
        SimulationConfig {
            k_min: 20,
            horizon_days: 10,
            n_sim: 8,
            decoys: 49,
            utility_repetitions: 3,
            ..Default::default()
        }
    }

    #[test]
    fn sweep_order_and_shape() {
        let spec = ExperimentSpec {
            base: tiny(),
            sweep: Some(SweepAxes {
                k_min: vec![40, 20],
                epsilon: vec![0.1, 1.0, 0.3],
            }),
            sensitivity: None,
            seed: 3,
            output_dir: None,
        };
        let rows = run_sweep(&spec).unwrap();
        let keys: Vec<(u64, f64)> = rows.iter().map(|r| (r.k_min, r.epsilon)).collect();
        assert_eq!(
            keys,
            vec![(20, 1.0), (20, 0.3), (20, 0.1), (40, 1.0), (40, 0.3), (40, 0.1)]
        );
        assert_eq!(sweep_plot_points(&rows).len(), 6 * 7);
    }

    #[test]
    fn single_point_sweep() {
        let spec = ExperimentSpec {
            base: tiny(),
            sweep: Some(SweepAxes {
                k_min: vec![20],
                epsilon: vec![0.3],
            }),
            sensitivity: None,
            seed: 1,
            output_dir: None,
        };
        assert_eq!(run_sweep(&spec).unwrap().len(), 1);
    }

    #[test]
    fn sensitivity_baseline_rows() {
        let spec = ExperimentSpec {
            base: tiny(),
            sweep: None,
            sensitivity: Some(SensitivityAxes {
                known_fraction: vec![0.2, 0.5],
                horizon_days: vec![10, 20],
                ..Default::default()
            }),
            seed: 5,
            output_dir: None,
        };
        let rows = run_sensitivity(&spec).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(
            (rows[0].axis, rows[0].value, rows[0].delta_pct),
            (Axis::KnownFraction, 0.1, 0.0)
        );
        assert_eq!(
            (rows[3].axis, rows[3].value, rows[3].delta_pct),
            (Axis::HorizonDays, 10.0, 0.0)
        );
        assert_eq!(rows[0].pvar95, rows[3].pvar95);
    }

    #[test]
    fn spec_requires_seed_and_known_fields() {
        assert!(ExperimentSpec::from_json(r#"{"base":{}}"#).is_err());
        assert!(ExperimentSpec::from_json(r#"{"seed":1,"sweeps":{}}"#).is_err());
        let s = ExperimentSpec::from_json(r#"{"seed":4,"base":{"k_min":50}}"#).unwrap();
        assert_eq!(s.base_config().seed, 4);
        assert!(ExperimentSpec::from_json(r#"{"seed":4,"base":{"epsilon":-1}}"#).is_err());
    }

    #[test]
    fn missing_axes_are_errors() {
        let spec = ExperimentSpec {
            base: tiny(),
            sweep: None,
            sensitivity: None,
            seed: 0,
            output_dir: None,
        };
        assert!(run_sweep(&spec).is_err());
        assert!(run_sensitivity(&spec).is_err());
    }
}
