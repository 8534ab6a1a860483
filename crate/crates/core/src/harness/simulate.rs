//! Receding-horizon closed-loop evaluation on the identified model or on the
//! emulator, with a thermostat baseline for comparison.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dynamics::NeuralSsm;
use crate::error::{Error, Result};
use crate::plant::{
    comfort_schedule, synth_disturbance, ActuatorRange, AmbientConfig, ComfortConfig, PlantState,
    RcBuildingModel, ScenarioBatch,
};
use crate::policy::{policy_apply_receding, PolicyNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    /// The identified state-space model.
    Nominal,
    /// The RC emulator.
    True,
}

impl PlantKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlantKind::Nominal => "nominal",
            PlantKind::True => "true",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub days: usize,
    /// Thermostat-controlled emulator days preceding the evaluation, used to
    /// fill the past output window.
    pub warmup_days: usize,
    /// Uniform envelope temperature at the start of the warm-up, degC.
    pub initial_temp: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            days: 7,
            warmup_days: 2,
            initial_temp: 20.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, key: &str) -> Result<()> {
        if self.days == 0 {
            return Err(Error::config(format!("{key}.days"), "must be at least 1"));
        }
        if self.warmup_days == 0 {
            return Err(Error::config(
                format!("{key}.warmup_days"),
                "must be at least 1",
            ));
        }
        if !self.initial_temp.is_finite() {
            return Err(Error::config(
                format!("{key}.initial_temp"),
                "must be finite",
            ));
        }
        Ok(())
    }
}

/// Everything a closed-loop run needs besides the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalScenario {
    /// Ambient temperature per step; must cover `steps + horizon`.
    pub ambient: Vec<f64>,
    /// Comfort bounds per sample; must cover `steps + horizon + 1`.
    pub y_lower: Vec<Vec<f64>>,
    pub y_upper: Vec<Vec<f64>>,
    /// Most recent outputs before the first step, oldest first.
    pub history: Vec<Vec<f64>>,
    /// Emulator state matching the last entry of `history`.
    pub initial_state: PlantState,
    pub steps: usize,
}

impl EvalScenario {
    pub fn check_coverage(&self, horizon: usize, past: usize) -> Result<()> {
        if self.ambient.len() < self.steps + horizon {
            return Err(Error::config(
                "run.eval.days",
                format!(
                    "disturbance forecast covers {} samples, {} steps with horizon {horizon} need {}",
                    self.ambient.len(),
                    self.steps,
                    self.steps + horizon
                ),
            ));
        }
        if self.y_lower.len() < self.steps + horizon + 1
            || self.y_upper.len() < self.steps + horizon + 1
        {
            return Err(Error::config(
                "run.eval.days",
                "comfort schedule does not cover the horizon",
            ));
        }
        if self.history.len() < past {
            return Err(Error::config(
                "run.eval.warmup_days",
                format!(
                    "warm-up yields {} samples, the observer needs {past}",
                    self.history.len()
                ),
            ));
        }
        Ok(())
    }
}

const EVAL_STREAM: u64 = 0x2545_f491_4f6c_dd1d;

/// Ambient series, comfort schedule and thermostat warm-up for an
/// evaluation run. The warm-up spans whole days so evaluation starts at
/// midnight.
pub fn build_eval_scenario(
    plant: &RcBuildingModel,
    comfort: &ComfortConfig,
    ambient: &AmbientConfig,
    cfg: &EvalConfig,
    past: usize,
    horizon: usize,
    seed: u64,
) -> Result<EvalScenario> {
    cfg.validate("run.eval")?;
    comfort.validate("plant.comfort")?;
    let spd = plant.params().steps_per_day();
    let steps = cfg.days * spd;
    let warm = cfg.warmup_days * spd;
    let extra_days = (horizon + 1).div_ceil(spd);
    let amb = synth_disturbance(
        cfg.warmup_days + cfg.days + extra_days,
        plant.params().ts,
        seed ^ EVAL_STREAM,
        ambient,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_STREAM);
    let (lo, hi) = comfort_schedule(
        plant.zones(),
        amb.len(),
        plant.params().ts,
        comfort,
        &mut rng,
    );

    let mut state = plant.uniform_state(cfg.initial_temp);
    let mut history = vec![plant.output(&state.x)];
    let mut thermostat = BangBang::new(plant.actuators());
    for k in 0..warm {
        let y = plant.output(&state.x);
        let u = thermostat.decide(&y, &lo[k + 1]);
        state = plant.step(&state, &u, amb[k])?.state;
        history.push(plant.output(&state.x));
    }
    let keep = history.len().saturating_sub(past.max(1));
    state.k = 0;
    Ok(EvalScenario {
        ambient: amb[warm..].to_vec(),
        y_lower: lo[warm..].to_vec(),
        y_upper: hi[warm..].to_vec(),
        history: history[keep..].to_vec(),
        initial_state: state,
        steps,
    })
}

/// Thermostat: full flow to every zone below its upcoming lower bound,
/// maximum supply temperature while any zone heats, minimum otherwise.
#[derive(Debug, Clone)]
pub struct BangBang {
    actuators: ActuatorRange,
}

impl BangBang {
    pub fn new(actuators: ActuatorRange) -> Self {
        Self { actuators }
    }

    pub fn decide(&mut self, y: &[f64], lower_next: &[f64]) -> Vec<f64> {
        let on: Vec<bool> = y.iter().zip(lower_next).map(|(y, l)| y < l).collect();
        let any = on.iter().any(|b| *b);
        let mut u = vec![if any {
            self.actuators.upper[0]
        } else {
            self.actuators.lower[0]
        }];
        u.extend(on.iter().enumerate().map(|(j, b)| {
            if *b {
                self.actuators.upper[1 + j]
            } else {
                self.actuators.lower[1 + j]
            }
        }));
        u
    }
}

/// Source of control decisions inside [`simulate`].
pub enum Controller<'a> {
    Policy(&'a PolicyNet),
    BangBang(BangBang),
}

/// Per-run closed-loop metrics. Energy and smoothness proxies use
/// actuator-normalized controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: usize,
    pub zone_steps: usize,
    /// Fraction of zone-steps outside the comfort band.
    pub violation_rate: f64,
    /// Mean distance to the band over violating zone-steps, degC.
    pub mean_violation: f64,
    /// Mean distance to the band over all zone-steps, degC.
    pub mean_violation_all: f64,
    pub max_violation: f64,
    /// Sum of squared normalized controls.
    pub energy_proxy: f64,
    /// Delivered heat, J.
    pub heat_joules: f64,
    /// Sum of squared normalized control increments.
    pub smoothness: f64,
    /// Applied controls outside the actuator range (after clamping).
    pub actuator_violations: usize,
    /// Steps at which the requested control had to be clamped.
    pub saturated_steps: usize,
}

/// One logged step: the applied control and the output it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub ambient: f64,
    pub u: Vec<f64>,
    pub heat: Vec<f64>,
    pub y: Vec<f64>,
    pub y_lower: Vec<f64>,
    pub y_upper: Vec<f64>,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub records: Vec<StepRecord>,
    pub metrics: Metrics,
}

fn window(
    history: &[Vec<f64>],
    scenario: &EvalScenario,
    k: usize,
    past: usize,
    horizon: usize,
    actuators: &ActuatorRange,
) -> Result<ScenarioBatch> {
    let flat =
        |rows: &[Vec<f64>]| Tensor::column(&rows.iter().flatten().cloned().collect::<Vec<_>>());
    let n_u = actuators.len();
    Ok(ScenarioBatch {
        y_past: flat(&history[history.len() - past..]),
        y_lower: flat(&scenario.y_lower[k + 1..k + 1 + horizon]),
        y_upper: flat(&scenario.y_upper[k + 1..k + 1 + horizon]),
        u_lower: flat(&vec![actuators.lower.clone(); horizon]),
        u_upper: flat(&vec![actuators.upper.clone(); horizon]),
        d: Tensor::column(&scenario.ambient[k..k + horizon]),
        u_prev: Tensor::zeros(n_u, 1),
    })
}

/// Run `scenario.steps` receding-horizon steps. Exactly one control vector
/// is applied per step, clamped to the actuator range; the logged control is
/// the applied one.
pub fn simulate(
    controller: &mut Controller,
    kind: PlantKind,
    plant: &RcBuildingModel,
    model: &NeuralSsm,
    scenario: &EvalScenario,
    horizon: usize,
) -> Result<Simulation> {
    let past = model.past();
    scenario.check_coverage(horizon, past)?;
    let actuators = plant.actuators();
    let cp = plant.params().cp;
    let ts = plant.params().ts;
    let zones = plant.zones();
    let mut history = scenario.history.clone();
    let mut state = scenario.initial_state.clone();
    let mut records = Vec::with_capacity(scenario.steps);

    for k in 0..scenario.steps {
        let y_now = history.last().expect("non-empty history").clone();
        let requested = match controller {
            Controller::Policy(p) => {
                let w = window(&history, scenario, k, past, horizon, &actuators)?;
                policy_apply_receding(p, &w)?.into_data()
            }
            Controller::BangBang(b) => b.decide(&y_now, &scenario.y_lower[k + 1]),
        };
        if requested.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("controller output at step {k}")));
        }
        let (u, saturated) = actuators.clamp(&requested);
        let heat: Vec<f64> = (0..zones)
            .map(|j| u[1 + j] * cp * (u[0] - y_now[j]))
            .collect();
        let y_next = match kind {
            PlantKind::True => {
                let out = plant.step(&state, &u, scenario.ambient[k])?;
                state = out.state;
                out.y
            }
            PlantKind::Nominal => {
                let yp: Vec<f64> = history[history.len() - past..]
                    .iter()
                    .flatten()
                    .cloned()
                    .collect();
                model
                    .predict(
                        &Tensor::column(&yp),
                        &Tensor::column(&u),
                        &Tensor::column(&scenario.ambient[k..k + 1]),
                        1,
                    )?
                    .into_data()
            }
        };
        history.push(y_next.clone());
        if history.len() > past + 1 {
            history.remove(0);
        }
        records.push(StepRecord {
            k,
            ambient: scenario.ambient[k],
            u,
            heat,
            y: y_next,
            y_lower: scenario.y_lower[k + 1].clone(),
            y_upper: scenario.y_upper[k + 1].clone(),
            saturated,
        });
    }
    let metrics = compute_metrics(&records, &actuators, ts);
    Ok(Simulation { records, metrics })
}

pub fn compute_metrics(records: &[StepRecord], actuators: &ActuatorRange, ts: f64) -> Metrics {
    let mut violations = 0usize;
    let mut zone_steps = 0usize;
    let mut total = 0.0;
    let mut max_v = 0.0f64;
    let mut energy = 0.0;
    let mut heat = 0.0;
    let mut smooth = 0.0;
    let mut act_viol = 0usize;
    let mut prev: Option<Vec<f64>> = None;
    for r in records {
        for ((y, lo), hi) in r.y.iter().zip(&r.y_lower).zip(&r.y_upper) {
            zone_steps += 1;
            let v = (lo - y).max(y - hi).max(0.0);
            if v > 0.0 {
                violations += 1;
                total += v;
                max_v = max_v.max(v);
            }
        }
        let un = actuators.normalize(&r.u);
        energy += un.iter().map(|v| v * v).sum::<f64>();
        if let Some(p) = &prev {
            smooth += un
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        prev = Some(un);
        act_viol +=
            r.u.iter()
                .enumerate()
                .filter(|(i, v)| **v < actuators.lower[*i] || **v > actuators.upper[*i])
                .count();
        heat += r.heat.iter().sum::<f64>() * ts;
    }
    Metrics {
        steps: records.len(),
        zone_steps,
        violation_rate: if zone_steps > 0 {
            violations as f64 / zone_steps as f64
        } else {
            0.0
        },
        mean_violation: if violations > 0 {
            total / violations as f64
        } else {
            0.0
        },
        mean_violation_all: if zone_steps > 0 {
            total / zone_steps as f64
        } else {
            0.0
        },
        max_violation: max_v,
        energy_proxy: energy,
        heat_joules: heat,
        smoothness: smooth,
        actuator_violations: act_viol,
        saturated_steps: records.iter().filter(|r| r.saturated).count(),
    }
}

/// Trajectory CSV header for `zones` zones.
pub fn trajectory_header(zones: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "time".to_string(), "d_0".to_string()];
    for prefix in ["y", "ylo", "yhi"] {
        h.extend((0..zones).map(|j| format!("{prefix}_{j}")));
    }
    h.extend((0..=zones).map(|i| format!("u_{i}")));
    h.extend((0..zones).map(|j| format!("q_{j}")));
    h.push("saturated".into());
    h
}

pub fn trajectory_rows(records: &[StepRecord], ts: f64) -> Vec<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            let mut row = vec![r.k as f64, (r.k + 1) as f64 * ts, r.ambient];
            row.extend(&r.y);
            row.extend(&r.y_lower);
            row.extend(&r.y_upper);
            row.extend(&r.u);
            row.extend(&r.heat);
            row.push(if r.saturated { 1.0 } else { 0.0 });
            row
        })
        .collect()
}
