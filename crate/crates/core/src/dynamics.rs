//! Block-structured neural state-space model and its identification.
//!
//! ```text
//! x_t     = f_o([y_{t-P+1}; ...; y_t])
//! x_{k+1} = f_x(x_k) + f_u(u_k) + f_d(d_k)
//! y_{k+1} = f_y(x_{k+1})
//! ```
//!
//! Signals enter and leave the model in engineering units. Fixed affine
//! scalings (stored with the model) map them to the normalized coordinates
//! the blocks operate in: outputs and disturbances by their training-split
//! mean and standard deviation, controls by the actuator range so that
//! `0` and `1` are the actuator limits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, Tensor, Var};
use crate::blocks::{
    join, Activation, BoundLinear, BoundMlp, LinearMap, Mlp, MlpShape, Parameters,
    StableDynamicsMap,
};
use crate::error::{Error, Result};
use crate::plant::dataset::{mean_std, variance};
use crate::plant::{ActuatorRange, Split, SysIdBatch, SysIdDataset};
use crate::policy::penalty::{penalty_lower, penalty_upper, PenaltyActivation};

/// Fixed affine maps `normalized = (value - offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalScaling {
    pub y_offset: Vec<f64>,
    pub y_scale: Vec<f64>,
    pub u_offset: Vec<f64>,
    pub u_scale: Vec<f64>,
    pub d_offset: Vec<f64>,
    pub d_scale: Vec<f64>,
}

fn guard_scale(s: Vec<f64>) -> Vec<f64> {
    s.into_iter()
        .map(|v| if v > 1e-9 { v } else { 1.0 })
        .collect()
}

impl SignalScaling {
    pub fn identity(n_y: usize, n_u: usize, n_d: usize) -> Self {
        Self {
            y_offset: vec![0.0; n_y],
            y_scale: vec![1.0; n_y],
            u_offset: vec![0.0; n_u],
            u_scale: vec![1.0; n_u],
            d_offset: vec![0.0; n_d],
            d_scale: vec![1.0; n_d],
        }
    }

    /// Output/disturbance statistics of the training split; controls scaled
    /// by the actuator range.
    pub fn from_data(ds: &SysIdDataset, actuators: &ActuatorRange) -> Result<Self> {
        if actuators.len() != ds.n_u() {
            return Err(Error::Dimension(format!(
                "{} actuator ranges for {} controls",
                actuators.len(),
                ds.n_u()
            )));
        }
        let (s, e) = ds.splits.train;
        let (y_offset, y_scale) = mean_std(&ds.y[s..e]);
        let (d_offset, d_scale) = mean_std(&ds.d[s..e]);
        Ok(Self {
            y_offset,
            y_scale: guard_scale(y_scale),
            u_offset: actuators.lower.clone(),
            u_scale: guard_scale((0..actuators.len()).map(|i| actuators.span(i)).collect()),
            d_offset,
            d_scale: guard_scale(d_scale),
        })
    }

    pub fn n_y(&self) -> usize {
        self.y_offset.len()
    }

    pub fn n_u(&self) -> usize {
        self.u_offset.len()
    }

    pub fn n_d(&self) -> usize {
        self.d_offset.len()
    }

    fn validate(&self) -> Result<()> {
        let pairs = [
            ("y", &self.y_offset, &self.y_scale),
            ("u", &self.u_offset, &self.u_scale),
            ("d", &self.d_offset, &self.d_scale),
        ];
        for (name, off, scale) in pairs {
            if off.len() != scale.len() || off.is_empty() {
                return Err(Error::Dimension(format!(
                    "{name} scaling has mismatched lengths"
                )));
            }
            if scale.iter().any(|s| !(*s > 0.0 && s.is_finite()))
                || off.iter().any(|o| !o.is_finite())
            {
                return Err(Error::NonFinite(format!(
                    "{name} scaling must be finite with positive scales"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateMapKind {
    #[default]
    Stable,
    Linear,
    Mlp,
}

/// State-transition block `f_x`.
#[derive(Debug, Clone, PartialEq)]
pub enum StateMap {
    /// `A x` with `A` nonnegative and row sums in `[lambda_min, lambda_max]`.
    Stable(StableDynamicsMap),
    /// Unconstrained `W x + b`.
    Linear(LinearMap),
    Mlp(Mlp),
}

impl StateMap {
    fn dims(&self) -> (usize, usize) {
        match self {
            StateMap::Stable(m) => (m.dim(), m.dim()),
            StateMap::Linear(l) => (l.input_dim(), l.output_dim()),
            StateMap::Mlp(m) => (m.input_dim(), m.output_dim()),
        }
    }

    fn shape(&self) -> StateMapShape {
        match self {
            StateMap::Stable(m) => StateMapShape::Stable {
                n: m.dim(),
                lambda: {
                    let (lo, hi) = m.lambda_bounds();
                    [lo, hi]
                },
            },
            StateMap::Linear(l) => StateMapShape::Linear { n: l.input_dim() },
            StateMap::Mlp(m) => StateMapShape::Mlp(m.shape()),
        }
    }
}

impl Parameters for StateMap {
    fn params(&self) -> Vec<(String, &Tensor)> {
        match self {
            StateMap::Stable(m) => m.params(),
            StateMap::Linear(l) => l.params(),
            StateMap::Mlp(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            StateMap::Stable(m) => m.params_mut(),
            StateMap::Linear(l) => l.params_mut(),
            StateMap::Mlp(m) => m.params_mut(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateMapShape {
    Stable { n: usize, lambda: [f64; 2] },
    Linear { n: usize },
    Mlp(MlpShape),
}

/// Weight-free description of a [`NeuralSsm`], enough to rebuild it before
/// loading parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsmArchitecture {
    pub past: usize,
    pub observer: MlpShape,
    pub state_map: StateMapShape,
    pub input_map: MlpShape,
    pub disturbance_map: MlpShape,
    pub n_y: usize,
}

/// User-facing model options; signal dimensions come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmConfig {
    /// Past output window read by the observer.
    pub past: usize,
    /// Latent state size; `None` means three per output.
    pub n_x: Option<usize>,
    pub observer_hidden: Vec<usize>,
    pub state_map: StateMapKind,
    /// Hidden sizes when `state_map` is `mlp`.
    pub state_hidden: Vec<usize>,
    pub input_hidden: Vec<usize>,
    pub disturbance_hidden: Vec<usize>,
    pub activation: Activation,
    pub lambda: [f64; 2],
    pub training: SysIdConfig,
}

impl Default for SsmConfig {
    fn default() -> Self {
        Self {
            past: 16,
            n_x: None,
            observer_hidden: Vec::new(),
            state_map: StateMapKind::Stable,
            state_hidden: vec![32],
            input_hidden: vec![32],
            disturbance_hidden: vec![16],
            activation: Activation::Gelu,
            lambda: [0.8, 0.99],
            training: SysIdConfig::default(),
        }
    }
}

fn chain(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl SsmConfig {
    pub fn validate(&self, key: &str) -> Result<()> {
        if self.past == 0 {
            return Err(Error::config(format!("{key}.past"), "must be at least 1"));
        }
        if self.n_x == Some(0) {
            return Err(Error::config(format!("{key}.n_x"), "must be positive"));
        }
        for (name, h) in [
            ("observer_hidden", &self.observer_hidden),
            ("state_hidden", &self.state_hidden),
            ("input_hidden", &self.input_hidden),
            ("disturbance_hidden", &self.disturbance_hidden),
        ] {
            if h.contains(&0) {
                return Err(Error::config(
                    format!("{key}.{name}"),
                    "hidden sizes must be positive",
                ));
            }
        }
        let [lo, hi] = self.lambda;
        if !(0.0 <= lo && lo < hi && hi < 1.0) {
            return Err(Error::config(
                format!("{key}.lambda"),
                format!("need 0 <= lower < upper < 1, got [{lo}, {hi}]"),
            ));
        }
        self.training.validate(&format!("{key}.training"))
    }

    pub fn architecture(&self, n_y: usize, n_u: usize, n_d: usize) -> SsmArchitecture {
        let past = self.past;
        let n_x = self.n_x.unwrap_or(3 * n_y);
        let act = self.activation;
        let shape = |sizes| MlpShape {
            sizes,
            activation: act,
        };
        SsmArchitecture {
            past,
            observer: shape(chain(past * n_y, &self.observer_hidden, n_x)),
            state_map: match self.state_map {
                StateMapKind::Stable => StateMapShape::Stable {
                    n: n_x,
                    lambda: self.lambda,
                },
                StateMapKind::Linear => StateMapShape::Linear { n: n_x },
                StateMapKind::Mlp => StateMapShape::Mlp(shape(chain(n_x, &self.state_hidden, n_x))),
            },
            input_map: shape(chain(n_u, &self.input_hidden, n_x)),
            disturbance_map: shape(chain(n_d, &self.disturbance_hidden, n_x)),
            n_y,
        }
    }
}

/// The identified model.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralSsm {
    pub observer: Mlp,
    pub state_map: StateMap,
    pub input_map: Mlp,
    pub disturbance_map: Mlp,
    pub output_map: LinearMap,
    pub scaling: SignalScaling,
    past: usize,
}

impl NeuralSsm {
    /// Randomly initialized model.
    pub fn new(arch: &SsmArchitecture, scaling: SignalScaling, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let observer = Mlp::new(&arch.observer.sizes, arch.observer.activation, &mut rng)?;
        let state_map = match &arch.state_map {
            StateMapShape::Stable { n, lambda } => {
                StateMap::Stable(StableDynamicsMap::new(*n, lambda[0], lambda[1], &mut rng)?)
            }
            StateMapShape::Linear { n } => StateMap::Linear(LinearMap::new(*n, *n, &mut rng)),
            StateMapShape::Mlp(s) => StateMap::Mlp(Mlp::new(&s.sizes, s.activation, &mut rng)?),
        };
        let input_map = Mlp::new(&arch.input_map.sizes, arch.input_map.activation, &mut rng)?;
        let disturbance_map = Mlp::new(
            &arch.disturbance_map.sizes,
            arch.disturbance_map.activation,
            &mut rng,
        )?;
        let n_x = observer.output_dim();
        let output_map = LinearMap::new(n_x, arch.n_y, &mut rng);
        Self::from_blocks(
            observer,
            state_map,
            input_map,
            disturbance_map,
            output_map,
            scaling,
            arch.past,
        )
    }

    /// All-zero parameters with the given architecture.
    pub fn zeros(arch: &SsmArchitecture, scaling: SignalScaling) -> Result<Self> {
        let observer = Mlp::from_shape(&arch.observer)?;
        let n_x = observer.output_dim();
        let state_map = match &arch.state_map {
            StateMapShape::Stable { n, lambda } => StateMap::Stable(StableDynamicsMap::from_parts(
                Tensor::zeros(*n, *n),
                Tensor::zeros(*n, 1),
                lambda[0],
                lambda[1],
            )?),
            StateMapShape::Linear { n } => StateMap::Linear(LinearMap::zeros(*n, *n)),
            StateMapShape::Mlp(s) => StateMap::Mlp(Mlp::from_shape(s)?),
        };
        Self::from_blocks(
            observer,
            state_map,
            Mlp::from_shape(&arch.input_map)?,
            Mlp::from_shape(&arch.disturbance_map)?,
            LinearMap::zeros(n_x, arch.n_y),
            scaling,
            arch.past,
        )
    }

    pub fn from_blocks(
        observer: Mlp,
        state_map: StateMap,
        input_map: Mlp,
        disturbance_map: Mlp,
        output_map: LinearMap,
        scaling: SignalScaling,
        past: usize,
    ) -> Result<Self> {
        scaling.validate()?;
        let n_x = observer.output_dim();
        let (n_y, n_u, n_d) = (scaling.n_y(), scaling.n_u(), scaling.n_d());
        let checks = [
            ("observer input", observer.input_dim(), past * n_y),
            ("state map input", state_map.dims().0, n_x),
            ("state map output", state_map.dims().1, n_x),
            ("input map input", input_map.input_dim(), n_u),
            ("input map output", input_map.output_dim(), n_x),
            ("disturbance map input", disturbance_map.input_dim(), n_d),
            ("disturbance map output", disturbance_map.output_dim(), n_x),
            ("output map input", output_map.input_dim(), n_x),
            ("output map output", output_map.output_dim(), n_y),
        ];
        if past == 0 {
            return Err(Error::Dimension(
                "past window must be at least one sample".into(),
            ));
        }
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::Dimension(format!(
                    "{what} is {got}, expected {want}"
                )));
            }
        }
        Ok(Self {
            observer,
            state_map,
            input_map,
            disturbance_map,
            output_map,
            scaling,
            past,
        })
    }

    pub fn architecture(&self) -> SsmArchitecture {
        SsmArchitecture {
            past: self.past,
            observer: self.observer.shape(),
            state_map: self.state_map.shape(),
            input_map: self.input_map.shape(),
            disturbance_map: self.disturbance_map.shape(),
            n_y: self.n_y(),
        }
    }

    pub fn past(&self) -> usize {
        self.past
    }

    pub fn n_x(&self) -> usize {
        self.observer.output_dim()
    }

    pub fn n_y(&self) -> usize {
        self.scaling.n_y()
    }

    pub fn n_u(&self) -> usize {
        self.scaling.n_u()
    }

    pub fn n_d(&self) -> usize {
        self.scaling.n_d()
    }

    /// Record all blocks on `g`. With `trainable = false` the weights enter as
    /// constants and receive no gradient.
    pub fn bind(&self, g: &mut Graph, prefix: &str, trainable: bool) -> Result<BoundSsm> {
        let state = match &self.state_map {
            StateMap::Stable(m) => {
                BoundState::Matrix(m.bind(g, &join(prefix, "state"), trainable)?)
            }
            StateMap::Linear(l) => {
                BoundState::Linear(l.bind(g, &join(prefix, "state"), trainable)?)
            }
            StateMap::Mlp(m) => BoundState::Mlp(m.bind(g, &join(prefix, "state"), trainable)?),
        };
        let s = &self.scaling;
        let inv = |v: &[f64]| Tensor::column(&v.iter().map(|x| 1.0 / x).collect::<Vec<_>>());
        let tile = |v: &[f64]| {
            let t: Vec<f64> = (0..self.past).flat_map(|_| v.iter().cloned()).collect();
            t
        };
        Ok(BoundSsm {
            observer: self
                .observer
                .bind(g, &join(prefix, "observer"), trainable)?,
            state,
            input: self.input_map.bind(g, &join(prefix, "input"), trainable)?,
            disturbance: self
                .disturbance_map
                .bind(g, &join(prefix, "disturbance"), trainable)?,
            output: self
                .output_map
                .bind(g, &join(prefix, "output"), trainable)?,
            past_offset: g.constant(Tensor::column(&tile(&s.y_offset))),
            past_inv: g.constant(inv(&tile(&s.y_scale))),
            y_offset: g.constant(Tensor::column(&s.y_offset)),
            y_scale: g.constant(Tensor::column(&s.y_scale)),
            y_inv: g.constant(inv(&s.y_scale)),
            u_offset: g.constant(Tensor::column(&s.u_offset)),
            u_inv: g.constant(inv(&s.u_scale)),
            d_offset: g.constant(Tensor::column(&s.d_offset)),
            d_inv: g.constant(inv(&s.d_scale)),
            dims: Dims {
                n_x: self.n_x(),
                n_y: self.n_y(),
                n_u: self.n_u(),
                n_d: self.n_d(),
                past: self.past,
            },
        })
    }

    /// Open-loop `horizon`-step prediction outside any training graph.
    /// Inputs are column-batched as in [`SysIdBatch`]; returns
    /// `horizon * n_y x B` in engineering units.
    pub fn predict(
        &self,
        y_past: &Tensor,
        u: &Tensor,
        d: &Tensor,
        horizon: usize,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let m = self.bind(&mut g, "", false)?;
        let (yp, uv, dv) = (
            g.constant(y_past.clone()),
            g.constant(u.clone()),
            g.constant(d.clone()),
        );
        let r = m.rollout(&mut g, yp, uv, dv, horizon)?;
        Ok(g.value(r.y).clone())
    }
}

fn prefixed<T>(prefix: &str, ps: Vec<(String, T)>) -> Vec<(String, T)> {
    ps.into_iter().map(|(n, t)| (join(prefix, &n), t)).collect()
}

impl Parameters for NeuralSsm {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefixed("observer", self.observer.params());
        out.extend(prefixed("state", self.state_map.params()));
        out.extend(prefixed("input", self.input_map.params()));
        out.extend(prefixed("disturbance", self.disturbance_map.params()));
        out.extend(prefixed("output", self.output_map.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = prefixed("observer", self.observer.params_mut());
        out.extend(prefixed("state", self.state_map.params_mut()));
        out.extend(prefixed("input", self.input_map.params_mut()));
        out.extend(prefixed("disturbance", self.disturbance_map.params_mut()));
        out.extend(prefixed("output", self.output_map.params_mut()));
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    n_x: usize,
    n_y: usize,
    n_u: usize,
    n_d: usize,
    past: usize,
}

enum BoundState {
    Matrix(Var),
    Linear(BoundLinear),
    Mlp(BoundMlp),
}

/// A [`NeuralSsm`] recorded on a graph.
pub struct BoundSsm {
    observer: BoundMlp,
    state: BoundState,
    input: BoundMlp,
    disturbance: BoundMlp,
    output: BoundLinear,
    past_offset: Var,
    past_inv: Var,
    y_offset: Var,
    y_scale: Var,
    y_inv: Var,
    u_offset: Var,
    u_inv: Var,
    d_offset: Var,
    d_inv: Var,
    dims: Dims,
}

/// One model step on the graph.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub x_next: Var,
    pub y_next: Var,
    /// `f_u(u)` in latent coordinates.
    pub input_effect: Var,
    /// `f_d(d)` in latent coordinates.
    pub disturbance_effect: Var,
}

/// `horizon`-step rollout on the graph.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// `x_t` from the observer.
    pub x0: Var,
    /// `x_{t+1} .. x_{t+N}`
    pub states: Vec<Var>,
    /// `y_{t+1} .. y_{t+N}`, engineering units.
    pub outputs: Vec<Var>,
    pub input_effects: Vec<Var>,
    pub disturbance_effects: Vec<Var>,
    /// Outputs stacked to `N * n_y x B`, oldest first.
    pub y: Var,
}

fn expect_rows(g: &Graph, v: Var, rows: usize, what: &str) -> Result<()> {
    let (r, c) = g.shape(v);
    if r != rows {
        return Err(Error::Dimension(format!(
            "{what} has {r}x{c}, expected {rows} rows"
        )));
    }
    Ok(())
}

impl BoundSsm {
    pub fn n_x(&self) -> usize {
        self.dims.n_x
    }

    pub fn n_y(&self) -> usize {
        self.dims.n_y
    }

    pub fn n_u(&self) -> usize {
        self.dims.n_u
    }

    pub fn n_d(&self) -> usize {
        self.dims.n_d
    }

    pub fn past(&self) -> usize {
        self.dims.past
    }

    fn normalize(g: &mut Graph, v: Var, offset: Var, inv: Var) -> Result<Var> {
        let c = g.sub(v, offset)?;
        g.hadamard(c, inv)
    }

    /// Observer: stacked past outputs (`past * n_y x B`, oldest first) to `x_t`.
    pub fn estimate_initial_state(&self, g: &mut Graph, y_past: Var) -> Result<Var> {
        expect_rows(
            g,
            y_past,
            self.dims.past * self.dims.n_y,
            "past output window",
        )?;
        let z = Self::normalize(g, y_past, self.past_offset, self.past_inv)?;
        self.observer.forward(g, z)
    }

    /// `f_x(x)`
    pub fn state_update(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match &self.state {
            BoundState::Matrix(a) => g.matmul(*a, x),
            BoundState::Linear(l) => l.forward(g, x),
            BoundState::Mlp(m) => m.forward(g, x),
        }
    }

    /// `f_u(u)` for `u` in engineering units.
    pub fn input_effect(&self, g: &mut Graph, u: Var) -> Result<Var> {
        expect_rows(g, u, self.dims.n_u, "control")?;
        let z = Self::normalize(g, u, self.u_offset, self.u_inv)?;
        self.input.forward(g, z)
    }

    /// `f_d(d)` for `d` in engineering units.
    pub fn disturbance_effect(&self, g: &mut Graph, d: Var) -> Result<Var> {
        expect_rows(g, d, self.dims.n_d, "disturbance")?;
        let z = Self::normalize(g, d, self.d_offset, self.d_inv)?;
        self.disturbance.forward(g, z)
    }

    /// `f_y(x)` in engineering units.
    pub fn output(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let z = self.output.forward(g, x)?;
        let s = g.hadamard(z, self.y_scale)?;
        g.add(s, self.y_offset)
    }

    pub fn step(&self, g: &mut Graph, x: Var, u: Var, d: Var) -> Result<StepVars> {
        expect_rows(g, x, self.dims.n_x, "state")?;
        let cols = g.shape(x).1;
        if g.shape(u).1 != cols || g.shape(d).1 != cols {
            return Err(Error::Dimension(format!(
                "batch sizes differ: state {cols}, control {}, disturbance {}",
                g.shape(u).1,
                g.shape(d).1
            )));
        }
        let fx = self.state_update(g, x)?;
        let fu = self.input_effect(g, u)?;
        let fd = self.disturbance_effect(g, d)?;
        let s = g.add(fx, fu)?;
        let x_next = g.add(s, fd)?;
        let y_next = self.output(g, x_next)?;
        Ok(StepVars {
            x_next,
            y_next,
            input_effect: fu,
            disturbance_effect: fd,
        })
    }

    /// Observer followed by `horizon` chained steps. `u` is `N * n_u x B` and
    /// `d` is `N * n_d x B`, oldest first.
    pub fn rollout(
        &self,
        g: &mut Graph,
        y_past: Var,
        u: Var,
        d: Var,
        horizon: usize,
    ) -> Result<Rollout> {
        if horizon == 0 {
            return Err(Error::Dimension("horizon must be at least 1".into()));
        }
        expect_rows(g, u, horizon * self.dims.n_u, "control trajectory")?;
        expect_rows(g, d, horizon * self.dims.n_d, "disturbance trajectory")?;
        let x0 = self.estimate_initial_state(g, y_past)?;
        let mut x = x0;
        let mut r = Rollout {
            x0,
            states: Vec::with_capacity(horizon),
            outputs: Vec::with_capacity(horizon),
            input_effects: Vec::with_capacity(horizon),
            disturbance_effects: Vec::with_capacity(horizon),
            y: x0,
        };
        for k in 0..horizon {
            let uk = g.slice_rows(u, k * self.dims.n_u, self.dims.n_u)?;
            let dk = g.slice_rows(d, k * self.dims.n_d, self.dims.n_d)?;
            let s = self.step(g, x, uk, dk)?;
            x = s.x_next;
            r.states.push(s.x_next);
            r.outputs.push(s.y_next);
            r.input_effects.push(s.input_effect);
            r.disturbance_effects.push(s.disturbance_effect);
        }
        r.y = g.concat_rows(&r.outputs)?;
        Ok(r)
    }
}

/// Options of the identification trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SysIdConfig {
    pub horizon: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Spacing of training window anchors.
    pub stride: usize,
    /// Spacing of dev/test window anchors used for evaluation.
    pub eval_stride: usize,
    /// Stop after this many epochs without dev improvement (0 disables).
    pub patience: usize,
    pub smooth_weight: f64,
    pub influence_weight: f64,
    /// Default influence bound: this many standard deviations of the
    /// normalized one-step output increment.
    pub influence_scale: f64,
    /// Explicit `[lower, upper]` bound on every entry of `f_u` and `f_d`.
    pub influence_bounds: Option<[f64; 2]>,
    /// Learning rate decays linearly to `lr * final_lr_fraction`.
    pub final_lr_fraction: f64,
}

impl Default for SysIdConfig {
    fn default() -> Self {
        Self {
            horizon: 16,
            epochs: 300,
            batch_size: 64,
            stride: 1,
            eval_stride: 1,
            patience: 0,
            smooth_weight: 0.0,
            influence_weight: 0.1,
            influence_scale: 3.0,
            influence_bounds: None,
            final_lr_fraction: 1.0,
        }
    }
}

impl SysIdConfig {
    pub fn validate(&self, key: &str) -> Result<()> {
        let positive = [
            ("horizon", self.horizon),
            ("batch_size", self.batch_size),
            ("stride", self.stride),
            ("eval_stride", self.eval_stride),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{key}.{name}"), "must be at least 1"));
            }
        }
        for (name, v) in [
            ("smooth_weight", self.smooth_weight),
            ("influence_weight", self.influence_weight),
            ("influence_scale", self.influence_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(
                    format!("{key}.{name}"),
                    "must be finite and nonnegative",
                ));
            }
        }
        if let Some([lo, hi]) = self.influence_bounds {
            if !(lo <= hi) {
                return Err(Error::config(
                    format!("{key}.influence_bounds"),
                    format!("bounds are misordered: [{lo}, {hi}]"),
                ));
            }
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::config(
                format!("{key}.final_lr_fraction"),
                "must lie in (0, 1]",
            ));
        }
        Ok(())
    }
}

/// Weights and bounds of the identification loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SysIdObjective {
    pub smooth_weight: f64,
    pub influence_weight: f64,
    /// Elementwise bounds on `f_u(u)` and `f_d(d)`.
    pub influence: [f64; 2],
}

impl SysIdObjective {
    /// Pure output-fit loss.
    pub fn fit_only() -> Self {
        Self {
            smooth_weight: 0.0,
            influence_weight: 0.0,
            influence: [f64::NEG_INFINITY, f64::INFINITY],
        }
    }
}

/// Symmetric influence bound from the spread of normalized output increments
/// on the training split.
pub fn influence_bound_from_data(ds: &SysIdDataset, scaling: &SignalScaling, scale: f64) -> f64 {
    let (s, e) = ds.splits.train;
    let inc: Vec<Vec<f64>> = (s + 1..e)
        .map(|k| {
            (0..ds.n_y())
                .map(|j| (ds.y[k][j] - ds.y[k - 1][j]) / scaling.y_scale[j])
                .collect()
        })
        .collect();
    let sd = variance(&inc)
        .into_iter()
        .fold(0.0f64, |m, v| m.max(v.sqrt()));
    scale * sd
}

/// Loss terms recorded on the graph.
#[derive(Debug, Clone, Copy)]
pub struct SysIdLoss {
    pub total: Var,
    /// Mean squared normalized prediction error.
    pub fit: Var,
    /// Stacked predicted outputs, engineering units.
    pub prediction: Var,
}

fn mean_square(g: &mut Graph, v: Var) -> Result<Var> {
    let (r, c) = g.shape(v);
    let s = g.sum_squares(v)?;
    g.scale(s, 1.0 / (r * c) as f64)
}

fn influence_penalty(g: &mut Graph, effects: &[Var], bounds: [f64; 2], n_x: usize) -> Result<Var> {
    let hi = g.constant(Tensor::filled(n_x, 1, bounds[1]));
    let lo = g.constant(Tensor::filled(n_x, 1, bounds[0]));
    let mut terms = Vec::with_capacity(2 * effects.len());
    for &f in effects {
        let up = penalty_upper(g, f, hi, PenaltyActivation::Relu)?;
        let dn = penalty_lower(g, f, lo, PenaltyActivation::Relu)?;
        terms.push(up);
        terms.push(dn);
    }
    let all = g.concat_rows(&terms)?;
    let (r, c) = g.shape(all);
    let s = g.sum_squares(all)?;
    // average over latent entries and steps; both bounds count as one term
    g.scale(s, 2.0 / (r * c) as f64)
}

/// Multi-step identification loss on one batch:
/// mean squared normalized output error over the rollout, plus weighted
/// influence-bound and state-smoothness penalties.
pub fn sysid_loss(
    g: &mut Graph,
    model: &BoundSsm,
    batch: &SysIdBatch,
    obj: &SysIdObjective,
) -> Result<SysIdLoss> {
    if batch.size() == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    let n_y = model.n_y();
    let horizon = batch.y_future.rows() / n_y;
    let yp = g.constant(batch.y_past.clone());
    let u = g.constant(batch.u.clone());
    let d = g.constant(batch.d.clone());
    let target = g.constant(batch.y_future.clone());
    let r = model.rollout(g, yp, u, d, horizon)?;
    expect_rows(g, target, horizon * n_y, "target window")?;

    // per-step normalized residual
    let mut resid = Vec::with_capacity(horizon);
    for (k, &yk) in r.outputs.iter().enumerate() {
        let tk = g.slice_rows(target, k * n_y, n_y)?;
        let e = g.sub(yk, tk)?;
        resid.push(g.hadamard(e, model.y_inv)?);
    }
    let all = g.concat_rows(&resid)?;
    let fit = mean_square(g, all)?;
    let mut total = fit;

    if obj.influence_weight > 0.0 {
        let mut effects = r.input_effects.clone();
        effects.extend_from_slice(&r.disturbance_effects);
        let p = influence_penalty(g, &effects, obj.influence, model.n_x())?;
        let w = g.scale(p, obj.influence_weight)?;
        total = g.add(total, w)?;
    }
    if obj.smooth_weight > 0.0 {
        let mut diffs = Vec::with_capacity(horizon);
        let mut prev = r.x0;
        for &x in &r.states {
            diffs.push(g.sub(x, prev)?);
            prev = x;
        }
        let all = g.concat_rows(&diffs)?;
        let p = mean_square(g, all)?;
        let w = g.scale(p, obj.smooth_weight)?;
        total = g.add(total, w)?;
    }
    Ok(SysIdLoss {
        total,
        fit,
        prediction: r.y,
    })
}

/// Per-output and averaged open-loop prediction error normalized by the
/// output variance of the evaluated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmseReport {
    pub per_output: Vec<f64>,
    pub mean: f64,
    pub windows: usize,
}

const EVAL_CHUNK: usize = 512;

/// Open-loop `horizon`-step nMSE over the windows of a split.
pub fn open_loop_nmse(
    model: &NeuralSsm,
    ds: &SysIdDataset,
    split: Split,
    horizon: usize,
    stride: usize,
) -> Result<NmseReport> {
    Ok(evaluate(
        model,
        ds,
        split,
        horizon,
        stride,
        &SysIdObjective::fit_only(),
    )?
    .1)
}

/// Chunked dev/test evaluation: (mean sysid loss, nMSE).
fn evaluate(
    model: &NeuralSsm,
    ds: &SysIdDataset,
    split: Split,
    horizon: usize,
    stride: usize,
    obj: &SysIdObjective,
) -> Result<(f64, NmseReport)> {
    let anchors = ds.anchors(split, model.past(), horizon, stride);
    if anchors.is_empty() {
        return Err(Error::Contract(format!(
            "{split:?} split holds no complete window"
        )));
    }
    let n_y = model.n_y();
    let var = ds.output_variance(split);
    let mut sq = vec![0.0; n_y];
    let mut loss = 0.0;
    for chunk in anchors.chunks(EVAL_CHUNK) {
        let batch = ds.batch(chunk, model.past(), horizon)?;
        let mut g = Graph::new();
        let m = model.bind(&mut g, "", false)?;
        let l = sysid_loss(&mut g, &m, &batch, obj)?;
        loss += g.value(l.total).item()? * chunk.len() as f64;
        let pred = g.value(l.prediction);
        for (i, (p, t)) in pred.data().iter().zip(batch.y_future.data()).enumerate() {
            let row = i / pred.cols();
            sq[row % n_y] += (p - t) * (p - t);
        }
    }
    let count = (anchors.len() * horizon) as f64;
    let per_output: Vec<f64> = sq
        .iter()
        .zip(&var)
        .map(|(s, v)| s / count / v.max(1e-12))
        .collect();
    let mean = per_output.iter().sum::<f64>() / n_y as f64;
    Ok((
        loss / anchors.len() as f64,
        NmseReport {
            per_output,
            mean,
            windows: anchors.len(),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SysIdEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_nmse: f64,
    /// Best dev nMSE seen so far, the selection criterion.
    pub best_dev_nmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SysIdHistory {
    pub epochs: Vec<SysIdEpoch>,
    pub best_epoch: Option<usize>,
    pub influence_bounds: [f64; 2],
    pub updates: u64,
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(m) => Error::Training { epoch, message: m },
        other => other,
    }
}

/// Adam on [`sysid_loss`] over shuffled training windows. Returns the
/// parameters with the best dev nMSE and the per-epoch history. Same inputs
/// and seed give bitwise-identical results.
pub fn train_ssm(
    model: &NeuralSsm,
    ds: &SysIdDataset,
    cfg: &SysIdConfig,
    optimizer: &AdamConfig,
    seed: u64,
) -> Result<(NeuralSsm, SysIdHistory)> {
    cfg.validate("ssm.training")?;
    optimizer.validate("optimizer.ssm")?;
    if ds.n_y() != model.n_y() || ds.n_u() != model.n_u() || ds.n_d() != model.n_d() {
        return Err(Error::Dimension(format!(
            "dataset signals (y {}, u {}, d {}) do not match the model (y {}, u {}, d {})",
            ds.n_y(),
            ds.n_u(),
            ds.n_d(),
            model.n_y(),
            model.n_u(),
            model.n_d()
        )));
    }
    let bound = match cfg.influence_bounds {
        Some(b) => b,
        None => {
            let b = influence_bound_from_data(ds, &model.scaling, cfg.influence_scale);
            [-b, b]
        }
    };
    let obj = SysIdObjective {
        smooth_weight: cfg.smooth_weight,
        influence_weight: cfg.influence_weight,
        influence: bound,
    };
    let mut history = SysIdHistory {
        epochs: Vec::new(),
        best_epoch: None,
        influence_bounds: bound,
        updates: 0,
    };
    let mut current = model.clone();
    if cfg.epochs == 0 {
        return Ok((current, history));
    }
    let past = model.past();
    let mut anchors = ds.anchors(Split::Train, past, cfg.horizon, cfg.stride);
    if anchors.is_empty() {
        return Err(Error::Contract(
            "training split holds no complete window".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(*optimizer);
    let steps_per_epoch = anchors.len().div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs) as f64;
    let mut best = (f64::INFINITY, current.clone());
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        anchors.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in anchors.chunks(cfg.batch_size) {
            let progress = adam.steps() as f64 / total_steps;
            let lr = optimizer.lr * (1.0 - (1.0 - cfg.final_lr_fraction) * progress);
            let batch = ds.batch(chunk, past, cfg.horizon)?;
            let mut g = Graph::new();
            let m = current
                .bind(&mut g, "", true)
                .map_err(|e| diverged(epoch, e))?;
            let loss = sysid_loss(&mut g, &m, &batch, &obj).map_err(|e| diverged(epoch, e))?;
            let value = g.value(loss.total).item()?;
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("loss is {value}"),
                });
            }
            let grads = g.backward(loss.total)?;
            adam.set_lr(lr);
            adam.step(current.params_mut(), &grads)?;
            sum += value * chunk.len() as f64;
        }
        let train_loss = sum / anchors.len() as f64;
        let (dev_loss, nmse) =
            evaluate(&current, ds, Split::Dev, cfg.horizon, cfg.eval_stride, &obj)
                .map_err(|e| diverged(epoch, e))?;
        if !nmse.mean.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "dev prediction is not finite".into(),
            });
        }
        if nmse.mean < best.0 {
            best = (nmse.mean, current.clone());
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.epochs.push(SysIdEpoch {
            epoch,
            train_loss,
            dev_loss,
            dev_nmse: nmse.mean,
            best_dev_nmse: best.0,
        });
        log::info!(
            "sysid epoch {epoch}: train {train_loss:.5} dev {dev_loss:.5} dev nMSE {:.5}",
            nmse.mean
        );
        if cfg.patience > 0 && since_best >= cfg.patience {
            break;
        }
    }
    history.updates = adam.steps();
    Ok((best.1, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::LinearMap;

    fn scalar_model(a: f64) -> NeuralSsm {
        let t = |v: f64| Tensor::scalar(v);
        NeuralSsm::from_blocks(
            Mlp::from_layers(
                vec![LinearMap::from_parts(t(1.0), t(0.0)).unwrap()],
                Activation::Identity,
            )
            .unwrap(),
            StateMap::Linear(LinearMap::from_parts(t(a), t(0.0)).unwrap()),
            Mlp::zeros(&[1, 1], Activation::Identity).unwrap(),
            Mlp::zeros(&[1, 1], Activation::Identity).unwrap(),
            LinearMap::from_parts(t(1.0), t(0.0)).unwrap(),
            SignalScaling::identity(1, 1, 1),
            1,
        )
        .unwrap()
    }

    #[test]
    fn scalar_contraction_step() {
        let m = scalar_model(0.5);
        let mut g = Graph::new();
        let b = m.bind(&mut g, "", false).unwrap();
        let x = g.constant(Tensor::scalar(1.0));
        let u = g.constant(Tensor::scalar(3.0));
        let d = g.constant(Tensor::scalar(-2.0));
        let s = b.step(&mut g, x, u, d).unwrap();
        assert_eq!(g.value(s.x_next).item().unwrap(), 0.5);
        assert_eq!(g.value(s.y_next).item().unwrap(), 0.5);
    }

    #[test]
    fn identity_observer_returns_latest_output() {
        // n_x = n_y = 1, past 3, observer selects the newest sample
        let w = Tensor::from_rows(&[[0.0, 0.0, 1.0]]).unwrap();
        let observer = Mlp::from_layers(
            vec![LinearMap::from_parts(w, Tensor::scalar(0.0)).unwrap()],
            Activation::Identity,
        )
        .unwrap();
        let base = scalar_model(0.5);
        let m = NeuralSsm::from_blocks(
            observer,
            base.state_map.clone(),
            base.input_map.clone(),
            base.disturbance_map.clone(),
            base.output_map.clone(),
            SignalScaling::identity(1, 1, 1),
            3,
        )
        .unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g, "", false).unwrap();
        let yp = g.constant(Tensor::column(&[1.0, 2.0, 7.0]));
        let x = b.estimate_initial_state(&mut g, yp).unwrap();
        assert_eq!(g.value(x).item().unwrap(), 7.0);
        let short = g.constant(Tensor::column(&[1.0, 2.0]));
        assert!(matches!(
            b.estimate_initial_state(&mut g, short),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn constant_zero_prediction_has_unit_mse() {
        let m = NeuralSsm::zeros(
            &scalar_model(0.0).architecture(),
            SignalScaling::identity(1, 1, 1),
        )
        .unwrap();
        let batch = SysIdBatch {
            y_past: Tensor::filled(1, 2, 1.0),
            u: Tensor::zeros(4, 2),
            d: Tensor::zeros(4, 2),
            y_future: Tensor::filled(4, 2, 1.0),
        };
        let mut g = Graph::new();
        let b = m.bind(&mut g, "", false).unwrap();
        let l = sysid_loss(&mut g, &b, &batch, &SysIdObjective::fit_only()).unwrap();
        assert_eq!(g.value(l.total).item().unwrap(), 1.0);
    }

    #[test]
    fn architecture_round_trip_through_zeros() {
        let cfg = SsmConfig::default();
        let arch = SsmConfig { past: 16, ..cfg }.architecture(3, 4, 1);
        let m = NeuralSsm::new(&arch, SignalScaling::identity(3, 4, 1), 9).unwrap();
        assert_eq!(m.architecture(), arch);
        let z = NeuralSsm::zeros(&arch, SignalScaling::identity(3, 4, 1)).unwrap();
        let names: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
        let znames: Vec<String> = z.params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, znames);
        assert_eq!(m.n_x(), 9);
    }

    #[test]
    fn bound_param_names_match_parameter_listing() {
        let arch = SsmConfig {
            past: 4,
            ..SsmConfig::default()
        }
        .architecture(2, 3, 1);
        let m = NeuralSsm::new(&arch, SignalScaling::identity(2, 3, 1), 1).unwrap();
        let mut g = Graph::new();
        m.bind(&mut g, "", true).unwrap();
        let mut bound: Vec<String> = g.param_names().map(String::from).collect();
        let mut listed: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
        bound.sort();
        listed.sort();
        assert_eq!(bound, listed);
    }
}
