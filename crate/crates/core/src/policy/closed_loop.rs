//! Differentiable closed loop (control law feeding the frozen model) and the
//! control-law trainer.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureLayout, SegmentKind, Standardizer};
use super::law::{BoundPolicy, PolicyNet, ScenarioInputs};
use super::objective::{economic_loss, BoundVars, EconomicTerms, LossWeights};
use super::penalty::PenaltyActivation;
use crate::autodiff::{Adam, AdamConfig, Graph, Tensor, Var};
use crate::blocks::{Activation, Parameters};
use crate::dynamics::{BoundSsm, NeuralSsm, Rollout};
use crate::error::{Error, Result};
use crate::plant::{ActuatorRange, CtrlDataset, ScenarioBatch, Split};

/// Control law composed with a frozen identified model.
#[derive(Debug, Clone)]
pub struct ClosedLoopModel {
    pub policy: PolicyNet,
    pub model: NeuralSsm,
}

impl ClosedLoopModel {
    pub fn new(policy: PolicyNet, model: NeuralSsm) -> Result<Self> {
        if policy.n_u() != model.n_u() {
            return Err(Error::Dimension(format!(
                "policy emits {} controls, model takes {}",
                policy.n_u(),
                model.n_u()
            )));
        }
        for seg in &policy.layout.segments {
            let want = match seg.kind {
                SegmentKind::PastOutputs => model.past() * model.n_y(),
                SegmentKind::LowerBounds | SegmentKind::UpperBounds => {
                    policy.horizon() * model.n_y()
                }
                SegmentKind::Disturbances => policy.horizon() * model.n_d(),
            };
            if seg.rows != want {
                return Err(Error::Dimension(format!(
                    "feature segment `{}` has {} rows, the model implies {want}",
                    seg.name, seg.rows
                )));
            }
        }
        Ok(Self { policy, model })
    }

    pub fn horizon(&self) -> usize {
        self.policy.horizon()
    }
}

/// Closed-loop trajectories on the graph.
#[derive(Debug, Clone)]
pub struct ClosedLoopVars {
    pub features: Var,
    /// Planned controls, actuator-normalized.
    pub u_normalized: Var,
    /// Planned controls, engineering units.
    pub u: Var,
    /// Predicted outputs, degC.
    pub y: Var,
    pub rollout: Rollout,
}

/// `U_f = pi(xi)`, `Y_f = f_SSM([Y_p; U_f; D_f])` on one graph.
pub fn closed_loop_rollout(
    g: &mut Graph,
    policy: &BoundPolicy,
    model: &BoundSsm,
    scenario: &ScenarioInputs,
    horizon: usize,
) -> Result<ClosedLoopVars> {
    let out = policy.forward(g, &scenario.features())?;
    let rollout = model.rollout(g, scenario.y_past, out.engineering, scenario.d, horizon)?;
    Ok(ClosedLoopVars {
        features: out.features,
        u_normalized: out.normalized,
        u: out.engineering,
        y: rollout.y,
        rollout,
    })
}

/// Control bounds of a scenario in actuator-normalized units.
pub fn normalize_control_bounds(
    scenario: &ScenarioBatch,
    actuators: &ActuatorRange,
) -> (Tensor, Tensor) {
    let n_u = actuators.len();
    let norm = |t: &Tensor| {
        let mut out = t.clone();
        let cols = t.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / cols) % n_u;
            *v = (*v - actuators.lower[ch]) / actuators.span(ch);
        }
        out
    };
    (norm(&scenario.u_lower), norm(&scenario.u_upper))
}

/// Economic loss of the closed loop on a scenario batch. Controls and their
/// bounds enter the loss actuator-normalized, outputs in degC.
pub fn closed_loop_loss(
    g: &mut Graph,
    cl: &ClosedLoopModel,
    scenario: &ScenarioBatch,
    weights: &LossWeights,
    act: PenaltyActivation,
    train_policy: bool,
) -> Result<(EconomicTerms, ClosedLoopVars)> {
    let policy = cl.policy.bind(g, "", train_policy)?;
    let model = cl.model.bind(g, "ssm", false)?;
    let inputs = ScenarioInputs::bind(g, scenario);
    let vars = closed_loop_rollout(g, &policy, &model, &inputs, cl.horizon())?;
    let (u_lo, u_hi) = normalize_control_bounds(scenario, &cl.policy.actuators);
    let bounds = BoundVars {
        y_lower: inputs.y_lower,
        y_upper: inputs.y_upper,
        u_lower: g.constant(u_lo),
        u_upper: g.constant(u_hi),
    };
    let terms = economic_loss(
        g,
        vars.u_normalized,
        vars.y,
        &bounds,
        weights,
        inputs.u_prev,
        cl.policy.n_u(),
        act,
    )?;
    Ok((terms, vars))
}

/// Architecture of the control law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub horizon: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub features: Vec<SegmentKind>,
    pub training: PolicyTrainConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            horizon: 16,
            hidden: vec![166, 166, 166],
            activation: Activation::Gelu,
            features: vec![
                SegmentKind::PastOutputs,
                SegmentKind::LowerBounds,
                SegmentKind::Disturbances,
            ],
            training: PolicyTrainConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self, key: &str) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config(
                format!("{key}.horizon"),
                "must be at least 1",
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config(
                format!("{key}.hidden"),
                "hidden sizes must be positive",
            ));
        }
        if self.features.is_empty() {
            return Err(Error::config(
                format!("{key}.features"),
                "at least one feature segment is required",
            ));
        }
        self.training.validate(&format!("{key}.training"))
    }

    pub fn layout(&self, n_y: usize, n_d: usize, past: usize) -> FeatureLayout {
        FeatureLayout::from_kinds(&self.features, n_y, n_d, past, self.horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyTrainConfig {
    pub updates: usize,
    /// Scenarios per update; the whole training set if larger.
    pub batch_size: usize,
    pub train_scenarios: usize,
    pub dev_scenarios: usize,
    /// Dev evaluation period in updates.
    pub eval_every: usize,
    pub penalty: PenaltyActivation,
    /// Learning rate decays linearly to `lr * final_lr_fraction`.
    pub final_lr_fraction: f64,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self {
            updates: 1000,
            batch_size: 100,
            train_scenarios: 300,
            dev_scenarios: 300,
            eval_every: 50,
            penalty: PenaltyActivation::Relu,
            final_lr_fraction: 1.0,
        }
    }
}

impl PolicyTrainConfig {
    pub fn validate(&self, key: &str) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("train_scenarios", self.train_scenarios),
            ("dev_scenarios", self.dev_scenarios),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{key}.{name}"), "must be at least 1"));
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

/// Deterministic subset of window anchors: `count` drawn without
/// replacement, kept in time order.
pub fn pick_anchors(anchors: &[usize], count: usize, seed: u64) -> Vec<usize> {
    if count >= anchors.len() {
        return anchors.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, anchors.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| anchors[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEpoch {
    pub update: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub best_dev_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHistory {
    pub evaluations: Vec<PolicyEpoch>,
    pub initial_dev_loss: f64,
    pub best_dev_loss: f64,
    pub best_update: usize,
    pub updates: usize,
}

fn loss_value(g: &Graph, v: Var, update: usize) -> Result<f64> {
    let x = g.value(v).item()?;
    if !x.is_finite() {
        return Err(Error::Training {
            epoch: update,
            message: format!("closed-loop loss is {x}"),
        });
    }
    Ok(x)
}

fn eval_loss(
    cl: &ClosedLoopModel,
    batch: &ScenarioBatch,
    weights: &LossWeights,
    act: PenaltyActivation,
) -> Result<f64> {
    let mut g = Graph::new();
    let (terms, _) = closed_loop_loss(&mut g, cl, batch, weights, act, false)?;
    g.value(terms.total).item()
}

fn diverged(update: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(m) => Error::Training {
            epoch: update,
            message: m,
        },
        other => other,
    }
}

/// Fit feature standardization on the training scenarios of a dataset.
pub fn fit_standardizer(policy: &PolicyNet, batch: &ScenarioBatch) -> Result<Standardizer> {
    Ok(Standardizer::fit(&policy.raw_features(batch)?))
}

/// Training and dev scenario batches drawn from a control dataset.
pub fn scenario_sets(
    ds: &CtrlDataset,
    past: usize,
    horizon: usize,
    cfg: &PolicyTrainConfig,
    seed: u64,
) -> Result<(ScenarioBatch, ScenarioBatch)> {
    let train = pick_anchors(
        &ds.anchors(Split::Train, past, horizon, 1),
        cfg.train_scenarios,
        seed,
    );
    let dev = pick_anchors(
        &ds.anchors(Split::Dev, past, horizon, 1),
        cfg.dev_scenarios,
        seed ^ 1,
    );
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Contract(
            "control dataset too short for the horizon".into(),
        ));
    }
    Ok((
        ds.batch(&train, past, horizon)?,
        ds.batch(&dev, past, horizon)?,
    ))
}

/// Adam on the closed-loop economic loss with the model frozen. Returns the
/// best-on-dev control law and the evaluation history.
pub fn train_policy(
    cl: &ClosedLoopModel,
    train: &ScenarioBatch,
    dev: &ScenarioBatch,
    weights: &LossWeights,
    cfg: &PolicyTrainConfig,
    optimizer: &AdamConfig,
    seed: u64,
) -> Result<(PolicyNet, PolicyHistory)> {
    cfg.validate("policy.training")?;
    weights.validate("loss")?;
    optimizer.validate("optimizer.policy")?;
    let mut current = cl.clone();
    let initial = eval_loss(&current, dev, weights, cfg.penalty).map_err(|e| diverged(0, e))?;
    let mut history = PolicyHistory {
        evaluations: Vec::new(),
        initial_dev_loss: initial,
        best_dev_loss: initial,
        best_update: 0,
        updates: 0,
    };
    let mut best = current.policy.clone();
    let mut adam = Adam::new(*optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = train.size();
    let mut running = 0.0;
    let mut running_count = 0;

    for update in 1..=cfg.updates {
        let lr = optimizer.lr
            * (1.0 - (1.0 - cfg.final_lr_fraction) * (update - 1) as f64 / cfg.updates as f64);
        adam.set_lr(lr);
        let sub;
        let batch = if cfg.batch_size < n {
            let mut cols = sample(&mut rng, n, cfg.batch_size).into_vec();
            cols.sort_unstable();
            sub = train.select(&cols)?;
            &sub
        } else {
            train
        };
        let mut g = Graph::new();
        let (terms, _) = closed_loop_loss(&mut g, &current, batch, weights, cfg.penalty, true)
            .map_err(|e| diverged(update, e))?;
        let value = loss_value(&g, terms.total, update)?;
        let grads = g.backward(terms.total)?;
        adam.step(current.policy.params_mut(), &grads)?;
        running += value;
        running_count += 1;

        if update % cfg.eval_every == 0 || update == cfg.updates {
            let dev_loss =
                eval_loss(&current, dev, weights, cfg.penalty).map_err(|e| diverged(update, e))?;
            if !dev_loss.is_finite() {
                return Err(Error::Training {
                    epoch: update,
                    message: "dev loss is not finite".into(),
                });
            }
            if dev_loss < history.best_dev_loss {
                history.best_dev_loss = dev_loss;
                history.best_update = update;
                best = current.policy.clone();
            }
            history.evaluations.push(PolicyEpoch {
                update,
                train_loss: running / running_count as f64,
                dev_loss,
                best_dev_loss: history.best_dev_loss,
            });
            log::info!(
                "policy update {update}: train {:.5} dev {dev_loss:.5}",
                running / running_count as f64
            );
            running = 0.0;
            running_count = 0;
        }
    }
    history.updates = adam.steps() as usize;
    Ok((best, history))
}
