//! Evaluation reports and their aggregation across runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::simulate::{Metrics, PlantKind};

pub const REPORT_FORMAT: &str = "dpc.report.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub plant: PlantKind,
    pub horizon: usize,
    pub policy: Metrics,
    /// Thermostat on the same plant and scenario.
    pub baseline: Metrics,
    /// Policy energy proxy over baseline energy proxy.
    pub energy_ratio: f64,
    /// Violation rate of the same law on the identified model.
    pub nominal_violation_rate: f64,
    /// `policy.violation_rate - nominal_violation_rate`.
    pub mismatch_gap: f64,
}

impl EvalReport {
    pub fn new(
        cfg: &RunConfig,
        plant: PlantKind,
        horizon: usize,
        policy: Metrics,
        baseline: Metrics,
        nominal_violation_rate: f64,
    ) -> Self {
        let energy_ratio = if baseline.energy_proxy > 0.0 {
            policy.energy_proxy / baseline.energy_proxy
        } else {
            f64::INFINITY
        };
        let mismatch_gap = policy.violation_rate - nominal_violation_rate;
        Self {
            format: REPORT_FORMAT.into(),
            config_hash: cfg.hash(),
            seed: cfg.run.seed,
            plant,
            horizon,
            policy,
            baseline,
            energy_ratio,
            nominal_violation_rate,
            mismatch_gap,
        }
    }

    /// Scalar columns used by the summary table.
    pub fn columns(&self) -> Vec<(&'static str, f64)> {
        let p = &self.policy;
        let b = &self.baseline;
        vec![
            ("violation_rate", p.violation_rate),
            ("mean_violation", p.mean_violation),
            ("mean_violation_all", p.mean_violation_all),
            ("max_violation", p.max_violation),
            ("energy_proxy", p.energy_proxy),
            ("heat_kwh", p.heat_joules / 3.6e6),
            ("smoothness", p.smoothness),
            ("actuator_violations", p.actuator_violations as f64),
            ("saturated_steps", p.saturated_steps as f64),
            ("baseline_violation_rate", b.violation_rate),
            ("baseline_energy_proxy", b.energy_proxy),
            ("baseline_heat_kwh", b.heat_joules / 3.6e6),
            ("energy_ratio", self.energy_ratio),
            ("nominal_violation_rate", self.nominal_violation_rate),
            ("mismatch_gap", self.mismatch_gap),
        ]
    }

    /// Human-readable summary of one report.
    pub fn render(&self) -> String {
        let p = &self.policy;
        let b = &self.baseline;
        let mut s = format!(
            "plant {} | seed {} | {} steps | horizon {}\n",
            self.plant.as_str(),
            self.seed,
            p.steps,
            self.horizon
        );
        s += &format!(
            "{:<10} {:>10} {:>10} {:>12} {:>10} {:>10}\n",
            "", "viol.rate", "mean viol", "energy", "heat kWh", "smooth"
        );
        for (name, m) in [("policy", p), ("baseline", b)] {
            s += &format!(
                "{:<10} {:>10.4} {:>10.4} {:>12.2} {:>10.2} {:>10.3}\n",
                name,
                m.violation_rate,
                m.mean_violation,
                m.energy_proxy,
                m.heat_joules / 3.6e6,
                m.smoothness
            );
        }
        s += &format!(
            "energy ratio {:.4} | actuator violations {} | nominal violation rate {:.4} | mismatch gap {:+.4}\n",
            self.energy_ratio, p.actuator_violations, self.nominal_violation_rate, self.mismatch_gap
        );
        s
    }
}

/// Mean and sample standard deviation (zero for a single run).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn spread(values: &[f64]) -> Spread {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Spread { runs: n, mean, std }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub plant: PlantKind,
    pub metric: &'static str,
    pub spread: Spread,
}

/// Per plant kind and metric, mean and spread across reports. Rows keep the
/// column order of [`EvalReport::columns`].
pub fn summarize(reports: &[EvalReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&'static str, (PlantKind, Vec<&EvalReport>)> = BTreeMap::new();
    for r in reports {
        groups
            .entry(r.plant.as_str())
            .or_insert((r.plant, Vec::new()))
            .1
            .push(r);
    }
    let mut rows = Vec::new();
    for (plant, group) in groups.into_values() {
        let cols: Vec<Vec<(&'static str, f64)>> = group.iter().map(|r| r.columns()).collect();
        for (i, (name, _)) in cols[0].iter().enumerate() {
            let values: Vec<f64> = cols.iter().map(|c| c[i].1).collect();
            rows.push(SummaryRow {
                plant,
                metric: name,
                spread: spread(&values),
            });
        }
    }
    rows
}

pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<8} {:<26} {:>5} {:>14} {:>14}\n",
        "plant", "metric", "runs", "mean", "std"
    );
    for r in rows {
        s += &format!(
            "{:<8} {:<26} {:>5} {:>14.6} {:>14.6}\n",
            r.plant.as_str(),
            r.metric,
            r.spread.runs,
            r.spread.mean,
            r.spread.std
        );
    }
    s
}
