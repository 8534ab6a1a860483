//! Identification and control datasets generated from the emulator, with
//! chronological train/dev/test splits and fixed-length windows.
//!
//! Time alignment: `u[k]` and `d[k]` act between `y[k]` and `y[k + 1]`.
//! A window anchored at `t` with past length `P` and horizon `N` covers
//! past outputs `y[t-P+1..=t]`, inputs `u[t..t+N]`, `d[t..t+N]` and future
//! outputs (or output bounds) `y[t+1..=t+N]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::disturbance::{synth_disturbance, AmbientConfig};
use super::rc::{PlantState, RcBuildingModel};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Half-open sample ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: (usize, usize),
    pub dev: (usize, usize),
    pub test: (usize, usize),
}

impl Splits {
    /// Consecutive thirds; the test split absorbs any remainder.
    pub fn thirds(len: usize) -> Self {
        let third = len / 3;
        Self {
            train: (0, third),
            dev: (third, 2 * third),
            test: (2 * third, len),
        }
    }

    pub fn range(&self, split: Split) -> (usize, usize) {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

/// Number of windows that fit in a contiguous segment.
pub fn window_count(segment_len: usize, past: usize, horizon: usize) -> usize {
    (segment_len + 1).saturating_sub(past + horizon)
}

fn anchors_in(range: (usize, usize), past: usize, horizon: usize, stride: usize) -> Vec<usize> {
    let (start, end) = range;
    let count = window_count(end - start, past, horizon);
    (0..count)
        .step_by(stride.max(1))
        .map(|i| start + past - 1 + i)
        .collect()
}

fn stack(
    series: &[Vec<f64>],
    from: usize,
    len: usize,
    anchors: &[usize],
    offset: isize,
) -> Result<Tensor> {
    let width = series[0].len();
    let cols: Vec<Vec<f64>> = anchors
        .iter()
        .map(|&t| {
            let first = (t as isize + offset) as usize + from;
            (first..first + len)
                .flat_map(|k| series[k].iter().cloned())
                .collect()
        })
        .collect();
    let t = Tensor::from_columns(&cols)?;
    debug_assert_eq!(t.rows(), len * width);
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationConfig {
    /// Largest per-step change of each flow, as a fraction of its range.
    pub flow_step: f64,
    /// Samples simulated and discarded before recording starts.
    pub burn_in: usize,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            flow_step: 0.1,
            burn_in: 192,
        }
    }
}

impl ExcitationConfig {
    pub fn validate(&self, key: &str) -> Result<()> {
        if !(self.flow_step > 0.0 && self.flow_step <= 1.0) {
            return Err(Error::config(
                format!("{key}.flow_step"),
                "must lie in (0, 1]",
            ));
        }
        Ok(())
    }
}

/// Bounded random walk on every flow, fresh uniform supply temperature each
/// step.
struct Excitation {
    flows: Vec<f64>,
    step: f64,
}

impl Excitation {
    fn new(model: &RcBuildingModel, cfg: &ExcitationConfig, rng: &mut ChaCha8Rng) -> Self {
        let fmax = model.params().flow_max;
        let flows = (0..model.zones())
            .map(|_| rng.random_range(0.0..=fmax))
            .collect();
        Self {
            flows,
            step: cfg.flow_step * fmax,
        }
    }

    fn next(&mut self, model: &RcBuildingModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let p = model.params();
        let supply = rng.random_range(p.supply_range[0]..=p.supply_range[1]);
        for f in &mut self.flows {
            let mut v = *f + rng.random_range(-self.step..=self.step);
            // reflect at the actuator limits
            if v < 0.0 {
                v = -v;
            }
            if v > p.flow_max {
                v = 2.0 * p.flow_max - v;
            }
            *f = v.clamp(0.0, p.flow_max);
        }
        let mut u = vec![supply];
        u.extend_from_slice(&self.flows);
        u
    }
}

/// Recorded operation data: `(u, d, y)` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SysIdDataset {
    pub ts: f64,
    pub u: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub splits: Splits,
}

/// Column-batched identification windows.
#[derive(Debug, Clone)]
pub struct SysIdBatch {
    /// `past * n_y x B`, oldest sample first.
    pub y_past: Tensor,
    /// `horizon * n_u x B`
    pub u: Tensor,
    /// `horizon * n_d x B`
    pub d: Tensor,
    /// `horizon * n_y x B`
    pub y_future: Tensor,
}

impl SysIdBatch {
    pub fn size(&self) -> usize {
        self.y_past.cols()
    }
}

impl SysIdDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_u(&self) -> usize {
        self.u[0].len()
    }

    pub fn n_d(&self) -> usize {
        self.d[0].len()
    }

    pub fn n_y(&self) -> usize {
        self.y[0].len()
    }

    pub fn anchors(&self, split: Split, past: usize, horizon: usize, stride: usize) -> Vec<usize> {
        anchors_in(self.splits.range(split), past, horizon, stride)
    }

    pub fn batch(&self, anchors: &[usize], past: usize, horizon: usize) -> Result<SysIdBatch> {
        if anchors.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let p = past as isize;
        Ok(SysIdBatch {
            y_past: stack(&self.y, 0, past, anchors, 1 - p)?,
            u: stack(&self.u, 0, horizon, anchors, 0)?,
            d: stack(&self.d, 0, horizon, anchors, 0)?,
            y_future: stack(&self.y, 1, horizon, anchors, 0)?,
        })
    }

    /// Per-output variance over a split.
    pub fn output_variance(&self, split: Split) -> Vec<f64> {
        let (s, e) = self.splits.range(split);
        variance(&self.y[s..e])
    }
}

pub(crate) fn mean_std(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let width = rows[0].len();
    let mut mean = vec![0.0; width];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let var = variance(rows);
    (mean, var.iter().map(|v| v.sqrt()).collect())
}

pub(crate) fn variance(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let width = rows[0].len();
    let mut mean = vec![0.0; width];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    var
}

const AMBIENT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Open-loop excitation of the emulator over `days`.
pub fn generate_sysid_dataset(
    model: &RcBuildingModel,
    days: usize,
    excitation: &ExcitationConfig,
    ambient: &AmbientConfig,
    seed: u64,
) -> Result<SysIdDataset> {
    excitation.validate("plant.excitation")?;
    let ts = model.params().ts;
    let burn = excitation.burn_in;
    let spd = model.params().steps_per_day();
    let extra_days = burn.div_ceil(spd);
    let amb = synth_disturbance(days + extra_days, ts, seed ^ AMBIENT_STREAM, ambient)?;
    let amb = &amb[extra_days * spd - burn..];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exc = Excitation::new(model, excitation, &mut rng);
    let mut state = model.uniform_state(18.0);
    let len = days * spd;
    let (mut u, mut d, mut y) = (
        Vec::with_capacity(len),
        Vec::with_capacity(len),
        Vec::with_capacity(len),
    );
    for (k, &ambient_k) in amb.iter().enumerate().take(burn + len) {
        let uk = exc.next(model, &mut rng);
        if k >= burn {
            y.push(model.output(&state.x));
            u.push(uk.clone());
            d.push(vec![ambient_k]);
        }
        state = model.step(&state, &uk, ambient_k)?.state;
    }
    Ok(SysIdDataset {
        ts,
        u,
        d,
        y,
        splits: Splits::thirds(len),
    })
}

/// Comfort schedule sampler: a square-wave day/night lower bound per zone
/// with levels redrawn each day, and an upper bound a random band above it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComfortConfig {
    pub day_start_hour: f64,
    pub day_end_hour: f64,
    /// Range of the daytime lower bound, degC.
    pub day_lower: [f64; 2],
    pub night_lower: [f64; 2],
    /// Range of `upper - lower`, degC.
    pub band: [f64; 2],
    /// Range of the random initial envelope temperatures, degC.
    pub initial_temp: [f64; 2],
}

impl Default for ComfortConfig {
    fn default() -> Self {
        Self {
            day_start_hour: 6.0,
            day_end_hour: 22.0,
            day_lower: [19.0, 21.0],
            night_lower: [16.0, 18.0],
            band: [3.0, 5.0],
            initial_temp: [15.0, 25.0],
        }
    }
}

impl ComfortConfig {
    pub fn validate(&self, key: &str) -> Result<()> {
        for (name, r) in [
            ("day_lower", self.day_lower),
            ("night_lower", self.night_lower),
            ("band", self.band),
            ("initial_temp", self.initial_temp),
        ] {
            if !(r[0] <= r[1]) {
                return Err(Error::config(
                    format!("{key}.{name}"),
                    format!("range is misordered: [{}, {}]", r[0], r[1]),
                ));
            }
        }
        if self.band[0] < 0.0 {
            return Err(Error::config(format!("{key}.band"), "must be nonnegative"));
        }
        if !(0.0 <= self.day_start_hour
            && self.day_start_hour <= self.day_end_hour
            && self.day_end_hour <= 24.0)
        {
            return Err(Error::config(
                format!("{key}.day_start_hour"),
                "need 0 <= day_start_hour <= day_end_hour <= 24",
            ));
        }
        Ok(())
    }
}

/// Sampled control scenarios: past outputs, output and actuator bounds and
/// ambient temperature per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CtrlDataset {
    pub ts: f64,
    pub y: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub y_lower: Vec<Vec<f64>>,
    pub y_upper: Vec<Vec<f64>>,
    pub u_lower: Vec<Vec<f64>>,
    pub u_upper: Vec<Vec<f64>>,
    pub splits: Splits,
}

/// Column-batched control scenarios. Bounds are in engineering units.
#[derive(Debug, Clone)]
pub struct ScenarioBatch {
    /// `past * n_y x B`
    pub y_past: Tensor,
    /// `horizon * n_y x B` each
    pub y_lower: Tensor,
    pub y_upper: Tensor,
    /// `horizon * n_u x B` each
    pub u_lower: Tensor,
    pub u_upper: Tensor,
    /// `horizon * n_d x B`
    pub d: Tensor,
    /// Control preceding the horizon, normalized actuator units, `n_u x B`.
    pub u_prev: Tensor,
}

impl ScenarioBatch {
    pub fn size(&self) -> usize {
        self.y_past.cols()
    }

    pub fn select(&self, cols: &[usize]) -> Result<ScenarioBatch> {
        Ok(ScenarioBatch {
            y_past: self.y_past.select_columns(cols)?,
            y_lower: self.y_lower.select_columns(cols)?,
            y_upper: self.y_upper.select_columns(cols)?,
            u_lower: self.u_lower.select_columns(cols)?,
            u_upper: self.u_upper.select_columns(cols)?,
            d: self.d.select_columns(cols)?,
            u_prev: self.u_prev.select_columns(cols)?,
        })
    }
}

impl CtrlDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_y(&self) -> usize {
        self.y[0].len()
    }

    pub fn n_u(&self) -> usize {
        self.u_lower[0].len()
    }

    pub fn n_d(&self) -> usize {
        self.d[0].len()
    }

    pub fn anchors(&self, split: Split, past: usize, horizon: usize, stride: usize) -> Vec<usize> {
        anchors_in(self.splits.range(split), past, horizon, stride)
    }

    pub fn batch(&self, anchors: &[usize], past: usize, horizon: usize) -> Result<ScenarioBatch> {
        if anchors.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let p = past as isize;
        Ok(ScenarioBatch {
            y_past: stack(&self.y, 0, past, anchors, 1 - p)?,
            y_lower: stack(&self.y_lower, 1, horizon, anchors, 0)?,
            y_upper: stack(&self.y_upper, 1, horizon, anchors, 0)?,
            u_lower: stack(&self.u_lower, 0, horizon, anchors, 0)?,
            u_upper: stack(&self.u_upper, 0, horizon, anchors, 0)?,
            d: stack(&self.d, 0, horizon, anchors, 0)?,
            u_prev: Tensor::zeros(self.n_u(), anchors.len()),
        })
    }
}

/// Per-sample comfort bounds for `len` samples starting at midnight.
pub fn comfort_schedule(
    zones: usize,
    len: usize,
    ts: f64,
    cfg: &ComfortConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let spd = (86_400.0 / ts).round() as usize;
    let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
        if r[0] == r[1] {
            r[0]
        } else {
            rng.random_range(r[0]..=r[1])
        }
    };
    let mut lower = Vec::with_capacity(len);
    let mut upper = Vec::with_capacity(len);
    let mut levels: Vec<(f64, f64, f64)> = Vec::new();
    for k in 0..len {
        if k % spd == 0 {
            levels = (0..zones)
                .map(|_| {
                    (
                        draw(rng, cfg.day_lower),
                        draw(rng, cfg.night_lower),
                        draw(rng, cfg.band),
                    )
                })
                .collect();
        }
        let hour = 24.0 * (k % spd) as f64 / spd as f64;
        let day = hour >= cfg.day_start_hour && hour < cfg.day_end_hour;
        let lo: Vec<f64> = levels
            .iter()
            .map(|(dl, nl, _)| if day { *dl } else { *nl })
            .collect();
        let hi: Vec<f64> = lo.iter().zip(&levels).map(|(l, (_, _, b))| l + b).collect();
        lower.push(lo);
        upper.push(hi);
    }
    (lower, upper)
}

const CTRL_STREAM: u64 = 0x5851_f42d_4c95_7f2d;

/// Control scenarios: emulator output trajectories from random initial
/// envelope temperatures under random excitation, sampled comfort bounds,
/// fixed actuator bounds, and ambient forecasts.
pub fn generate_ctrl_dataset(
    model: &RcBuildingModel,
    days: usize,
    comfort: &ComfortConfig,
    excitation: &ExcitationConfig,
    ambient: &AmbientConfig,
    seed: u64,
) -> Result<CtrlDataset> {
    comfort.validate("plant.comfort")?;
    excitation.validate("plant.excitation")?;
    let ts = model.params().ts;
    let len = days * model.params().steps_per_day();
    let amb = synth_disturbance(days, ts, seed ^ AMBIENT_STREAM ^ CTRL_STREAM, ambient)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ CTRL_STREAM);
    let init = comfort.initial_temp;
    let x0 = (0..model.n_states())
        .map(|_| {
            if init[0] == init[1] {
                init[0]
            } else {
                rng.random_range(init[0]..=init[1])
            }
        })
        .collect();
    let mut state = PlantState { x: x0, k: 0 };
    let mut exc = Excitation::new(model, excitation, &mut rng);
    let mut y = Vec::with_capacity(len);
    for &a in &amb {
        y.push(model.output(&state.x));
        let uk = exc.next(model, &mut rng);
        state = model.step(&state, &uk, a)?.state;
    }
    let (y_lower, y_upper) = comfort_schedule(model.zones(), len, ts, comfort, &mut rng);
    let act = model.actuators();
    Ok(CtrlDataset {
        ts,
        y,
        d: amb.iter().map(|a| vec![*a]).collect(),
        y_lower,
        y_upper,
        u_lower: vec![act.lower.clone(); len],
        u_upper: vec![act.upper.clone(); len],
        splits: Splits::thirds(len),
    })
}
