//! Multi-zone resistance-capacitance building emulator.
//!
//! Every zone has three lumped temperature nodes: room air, external wall and
//! internal floor mass. Zones are coupled to their neighbours on a ring
//! through the air nodes; the ambient temperature drives the air node
//! (windows, infiltration) and the outer wall surface. Each zone has a
//! radiator delivering convective heat `q = m_dot * cp * (T_supply - T_zone)`.
//!
//! The continuous model is discretized exactly (zero-order hold) at the
//! sample time.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NODES_PER_ZONE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Capacitances {
    /// J/K
    pub air: f64,
    pub wall: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resistances {
    /// K/W
    pub air_wall: f64,
    pub wall_ambient: f64,
    pub air_floor: f64,
    pub window: f64,
    pub inter_zone: f64,
}

/// Physical parameters of the emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcParams {
    pub zones: usize,
    /// Sample time in seconds.
    pub ts: f64,
    /// Water specific heat, J/(kg K).
    pub cp: f64,
    /// Supply temperature range, degC.
    pub supply_range: [f64; 2],
    /// Maximum mass flow per zone radiator, kg/s.
    pub flow_max: f64,
    pub capacitance: Capacitances,
    pub resistance: Resistances,
}

impl Default for RcParams {
    /// Three-zone house. Slowest envelope mode ~32 h, fastest ~0.5 h.
    fn default() -> Self {
        Self {
            zones: 3,
            ts: 900.0,
            cp: 4186.0,
            supply_range: [30.0, 70.0],
            flow_max: 0.02,
            capacitance: Capacitances {
                air: 1.5e6,
                wall: 6.0e6,
                floor: 4.0e6,
            },
            resistance: Resistances {
                air_wall: 0.004,
                wall_ambient: 0.012,
                air_floor: 0.003,
                window: 0.04,
                inter_zone: 0.02,
            },
        }
    }
}

impl RcParams {
    pub fn validate(&self, key: &str) -> Result<()> {
        if self.zones == 0 {
            return Err(Error::config(format!("{key}.zones"), "must be at least 1"));
        }
        if !(self.ts > 0.0) || (86_400.0 / self.ts).fract() != 0.0 {
            return Err(Error::config(
                format!("{key}.ts"),
                "must be positive and divide one day evenly",
            ));
        }
        if !(self.cp > 0.0) {
            return Err(Error::config(format!("{key}.cp"), "must be positive"));
        }
        if !(self.supply_range[0] < self.supply_range[1]) {
            return Err(Error::config(
                format!("{key}.supply_range"),
                "lower must be below upper",
            ));
        }
        if !(self.flow_max > 0.0) {
            return Err(Error::config(format!("{key}.flow_max"), "must be positive"));
        }
        let c = self.capacitance;
        for (n, v) in [("air", c.air), ("wall", c.wall), ("floor", c.floor)] {
            if !(v > 0.0) {
                return Err(Error::config(
                    format!("{key}.capacitance.{n}"),
                    "must be positive",
                ));
            }
        }
        let r = self.resistance;
        for (n, v) in [
            ("air_wall", r.air_wall),
            ("wall_ambient", r.wall_ambient),
            ("air_floor", r.air_floor),
            ("window", r.window),
            ("inter_zone", r.inter_zone),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(
                    format!("{key}.resistance.{n}"),
                    "must be positive",
                ));
            }
        }
        Ok(())
    }

    pub fn steps_per_day(&self) -> usize {
        (86_400.0 / self.ts).round() as usize
    }

    /// Controls per step: one supply temperature plus one flow per zone.
    pub fn n_controls(&self) -> usize {
        self.zones + 1
    }
}

/// Per-channel actuator limits for `u = [T_supply, m_dot_1, ..., m_dot_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorRange {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ActuatorRange {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn span(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    /// Map engineering units to `[0, 1]` per channel.
    pub fn normalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| (v - self.lower[i]) / self.span(i))
            .collect()
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| self.lower[i] + v * self.span(i))
            .collect()
    }

    /// Clamp into range; the flag is set if any channel was saturated.
    pub fn clamp(&self, u: &[f64]) -> (Vec<f64>, bool) {
        let mut saturated = false;
        let out = u
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = v.clamp(self.lower[i], self.upper[i]);
                if c != v {
                    saturated = true;
                }
                c
            })
            .collect();
        (out, saturated)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// Envelope node temperatures, degC.
    pub x: Vec<f64>,
    /// Sample index.
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: PlantState,
    /// Zone air temperatures after the step.
    pub y: Vec<f64>,
    /// Heat delivered per zone during the step, W.
    pub heat: Vec<f64>,
    /// Controls actually applied (after clamping).
    pub applied: Vec<f64>,
    pub saturated: bool,
}

/// Discrete-time emulator `x' = A x + B_q q + E T_amb`, `y = C x`.
#[derive(Debug, Clone)]
pub struct RcBuildingModel {
    params: RcParams,
    a: DMatrix<f64>,
    b_q: DMatrix<f64>,
    e: Vec<f64>,
    a_cont: DMatrix<f64>,
}

impl RcBuildingModel {
    pub fn new(params: RcParams) -> Result<Self> {
        params.validate("plant.building")?;
        let zones = params.zones;
        let n = zones * NODES_PER_ZONE;
        let c = params.capacitance;
        let r = params.resistance;
        let mut ac = DMatrix::<f64>::zeros(n, n);
        let mut bq = DMatrix::<f64>::zeros(n, zones);
        let mut ec = vec![0.0; n];

        let link = |ac: &mut DMatrix<f64>, i: usize, j: usize, ci: f64, cj: f64, res: f64| {
            let g = 1.0 / res;
            ac[(i, i)] -= g / ci;
            ac[(i, j)] += g / ci;
            ac[(j, j)] -= g / cj;
            ac[(j, i)] += g / cj;
        };
        for z in 0..zones {
            let (air, wall, floor) = (3 * z, 3 * z + 1, 3 * z + 2);
            link(&mut ac, air, wall, c.air, c.wall, r.air_wall);
            link(&mut ac, air, floor, c.air, c.floor, r.air_floor);
            ac[(air, air)] -= 1.0 / (r.window * c.air);
            ec[air] += 1.0 / (r.window * c.air);
            ac[(wall, wall)] -= 1.0 / (r.wall_ambient * c.wall);
            ec[wall] += 1.0 / (r.wall_ambient * c.wall);
            bq[(air, z)] = 1.0 / c.air;
        }
        // ring coupling between neighbouring zones
        let pairs: Vec<(usize, usize)> = match zones {
            1 => vec![],
            2 => vec![(0, 1)],
            _ => (0..zones).map(|z| (z, (z + 1) % zones)).collect(),
        };
        for (p, q) in pairs {
            link(&mut ac, 3 * p, 3 * q, c.air, c.air, r.inter_zone);
        }

        // zero-order hold via the augmented matrix exponential
        let m = zones + 1;
        let mut aug = DMatrix::<f64>::zeros(n + m, n + m);
        aug.view_mut((0, 0), (n, n)).copy_from(&ac);
        aug.view_mut((0, n), (n, zones)).copy_from(&bq);
        for i in 0..n {
            aug[(i, n + zones)] = ec[i];
        }
        let phi = (aug * params.ts).exp();
        let a = phi.view((0, 0), (n, n)).into_owned();
        let b_q = phi.view((0, n), (n, zones)).into_owned();
        let e = (0..n).map(|i| phi[(i, n + zones)]).collect();

        Ok(Self {
            params,
            a,
            b_q,
            e,
            a_cont: ac,
        })
    }

    pub fn params(&self) -> &RcParams {
        &self.params
    }

    pub fn zones(&self) -> usize {
        self.params.zones
    }

    pub fn n_states(&self) -> usize {
        self.params.zones * NODES_PER_ZONE
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn heat_input(&self) -> &DMatrix<f64> {
        &self.b_q
    }

    pub fn ambient_coupling(&self) -> &[f64] {
        &self.e
    }

    /// Continuous-time time constants in hours, slowest first.
    pub fn time_constants_hours(&self) -> Vec<f64> {
        let eig = self.a_cont.complex_eigenvalues();
        let mut tau: Vec<f64> = eig.iter().map(|l| -1.0 / l.re / 3600.0).collect();
        tau.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        tau
    }

    pub fn actuators(&self) -> ActuatorRange {
        let mut lower = vec![self.params.supply_range[0]];
        let mut upper = vec![self.params.supply_range[1]];
        lower.extend(std::iter::repeat_n(0.0, self.params.zones));
        upper.extend(std::iter::repeat_n(self.params.flow_max, self.params.zones));
        ActuatorRange { lower, upper }
    }

    /// Zone air temperatures of a state.
    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        (0..self.params.zones)
            .map(|z| x[NODES_PER_ZONE * z])
            .collect()
    }

    /// Uniform state at `temp`.
    pub fn uniform_state(&self, temp: f64) -> PlantState {
        PlantState {
            x: vec![temp; self.n_states()],
            k: 0,
        }
    }

    /// Fixed point `(I - A)^{-1} E T_amb` under zero heating.
    pub fn equilibrium(&self, ambient: f64) -> Vec<f64> {
        let n = self.n_states();
        let lhs = DMatrix::<f64>::identity(n, n) - &self.a;
        let rhs = nalgebra::DVector::from_iterator(n, self.e.iter().map(|v| v * ambient));
        let sol = lhs
            .lu()
            .solve(&rhs)
            .expect("I - A is nonsingular for a dissipative envelope");
        sol.iter().cloned().collect()
    }

    /// Advance one sample with controls `u = [T_supply, m_dot...]` (degC,
    /// kg/s) and ambient temperature. Out-of-range controls are clamped and
    /// flagged.
    pub fn step(&self, state: &PlantState, u: &[f64], ambient: f64) -> Result<StepOutcome> {
        let zones = self.params.zones;
        if u.len() != zones + 1 {
            return Err(Error::Dimension(format!(
                "plant expects {} controls, got {}",
                zones + 1,
                u.len()
            )));
        }
        if state.x.len() != self.n_states() {
            return Err(Error::Dimension(format!(
                "plant state has {} entries, expected {}",
                state.x.len(),
                self.n_states()
            )));
        }
        let (applied, saturated) = self.actuators().clamp(u);
        let y = self.output(&state.x);
        let supply = applied[0];
        let heat: Vec<f64> = (0..zones)
            .map(|z| applied[1 + z] * self.params.cp * (supply - y[z]))
            .collect();
        let n = self.n_states();
        let mut next = vec![0.0; n];
        for (i, xi) in next.iter_mut().enumerate() {
            let mut acc = self.e[i] * ambient;
            for j in 0..n {
                acc += self.a[(i, j)] * state.x[j];
            }
            for (z, q) in heat.iter().enumerate() {
                acc += self.b_q[(i, z)] * q;
            }
            *xi = acc;
        }
        let y_next = self.output(&next);
        Ok(StepOutcome {
            state: PlantState {
                x: next,
                k: state.k + 1,
            },
            y: y_next,
            heat,
            applied,
            saturated,
        })
    }
}
