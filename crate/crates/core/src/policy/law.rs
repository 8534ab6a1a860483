//! Explicit control law: standardized features to a control trajectory.
//!
//! The network emits `U_f` in actuator-normalized units (`0` and `1` are the
//! actuator limits of each channel); [`PolicyOutput::engineering`] maps it
//! back to degC and kg/s.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{assemble_features, FeatureInputs, FeatureLayout, Standardizer};
use crate::autodiff::{Graph, Tensor, Var};
use crate::blocks::{Activation, BoundMlp, Mlp, MlpShape, Parameters};
use crate::error::{Error, Result};
use crate::plant::{ActuatorRange, ScenarioBatch};

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub net: Mlp,
    pub layout: FeatureLayout,
    pub standardizer: Standardizer,
    pub actuators: ActuatorRange,
    horizon: usize,
}

/// Weight-free description of a [`PolicyNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyArchitecture {
    pub net: MlpShape,
    pub layout: FeatureLayout,
    pub standardizer: Standardizer,
    pub actuators: ActuatorRange,
    pub horizon: usize,
}

impl PolicyNet {
    pub fn new(
        layout: FeatureLayout,
        hidden: &[usize],
        activation: Activation,
        actuators: ActuatorRange,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut sizes = vec![layout.rows()];
        sizes.extend_from_slice(hidden);
        sizes.push(horizon * actuators.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(&sizes, activation, &mut rng)?;
        // start from mid-range actuation: at the lower limits the heat input
        // (flow times supply-zone difference) has near-zero gradient
        if let Some(head) = net.layers_mut().last_mut() {
            head.bias = Tensor::filled(head.bias.rows(), 1, 0.5);
        }
        let standardizer = Standardizer::identity(layout.rows());
        Self::from_parts(net, layout, standardizer, actuators, horizon)
    }

    pub fn from_parts(
        net: Mlp,
        layout: FeatureLayout,
        standardizer: Standardizer,
        actuators: ActuatorRange,
        horizon: usize,
    ) -> Result<Self> {
        if horizon == 0 || actuators.is_empty() {
            return Err(Error::Dimension(
                "policy needs a positive horizon and at least one control".into(),
            ));
        }
        if net.input_dim() != layout.rows() || standardizer.rows() != layout.rows() {
            return Err(Error::Dimension(format!(
                "feature layout has {} rows, network expects {}, standardizer has {}",
                layout.rows(),
                net.input_dim(),
                standardizer.rows()
            )));
        }
        if net.output_dim() != horizon * actuators.len() {
            return Err(Error::Dimension(format!(
                "policy head has {} rows, expected horizon {horizon} x {} controls",
                net.output_dim(),
                actuators.len()
            )));
        }
        Ok(Self {
            net,
            layout,
            standardizer,
            actuators,
            horizon,
        })
    }

    pub fn from_architecture(arch: &PolicyArchitecture) -> Result<Self> {
        Self::from_parts(
            Mlp::from_shape(&arch.net)?,
            arch.layout.clone(),
            arch.standardizer.clone(),
            arch.actuators.clone(),
            arch.horizon,
        )
    }

    pub fn architecture(&self) -> PolicyArchitecture {
        PolicyArchitecture {
            net: self.net.shape(),
            layout: self.layout.clone(),
            standardizer: self.standardizer.clone(),
            actuators: self.actuators.clone(),
            horizon: self.horizon,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_u(&self) -> usize {
        self.actuators.len()
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str, trainable: bool) -> Result<BoundPolicy> {
        let n_u = self.n_u();
        let lo: Vec<f64> = (0..self.horizon)
            .flat_map(|_| self.actuators.lower.iter().cloned())
            .collect();
        let span: Vec<f64> = (0..self.horizon)
            .flat_map(|_| (0..n_u).map(|i| self.actuators.span(i)))
            .collect();
        Ok(BoundPolicy {
            net: self.net.bind(g, prefix, trainable)?,
            standardizer: self.standardizer.clone(),
            layout: self.layout.clone(),
            u_lower: g.constant(Tensor::column(&lo)),
            u_span: g.constant(Tensor::column(&span)),
        })
    }

    /// Raw (unstandardized) features of a scenario batch.
    pub fn raw_features(&self, scenario: &ScenarioBatch) -> Result<Tensor> {
        let mut g = Graph::new();
        let inputs = ScenarioInputs::bind(&mut g, scenario).features();
        let f = assemble_features(&mut g, &inputs, &self.layout)?;
        Ok(g.value(f).clone())
    }

    /// Control trajectory for each scenario column: (normalized, engineering).
    pub fn control_trajectory(&self, scenario: &ScenarioBatch) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, "", false)?;
        let inputs = ScenarioInputs::bind(&mut g, scenario).features();
        let out = p.forward(&mut g, &inputs)?;
        Ok((
            g.value(out.normalized).clone(),
            g.value(out.engineering).clone(),
        ))
    }
}

impl Parameters for PolicyNet {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.net.params_mut()
    }
}

/// Receding-horizon law: the first control of the planned trajectory, in
/// engineering units, one column per scenario.
pub fn policy_apply_receding(policy: &PolicyNet, scenario: &ScenarioBatch) -> Result<Tensor> {
    let (_, u) = policy.control_trajectory(scenario)?;
    u.slice_rows(0, policy.n_u())
}

pub struct BoundPolicy {
    net: BoundMlp,
    standardizer: Standardizer,
    layout: FeatureLayout,
    u_lower: Var,
    u_span: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyOutput {
    pub features: Var,
    /// `N * n_u x B`, actuator-normalized.
    pub normalized: Var,
    /// Same trajectory in engineering units.
    pub engineering: Var,
}

impl BoundPolicy {
    pub fn forward(&self, g: &mut Graph, inputs: &FeatureInputs) -> Result<PolicyOutput> {
        let raw = assemble_features(g, inputs, &self.layout)?;
        let features = self.standardizer.apply(g, raw)?;
        let normalized = self.net.forward(g, features)?;
        let scaled = g.hadamard(normalized, self.u_span)?;
        let engineering = g.add(scaled, self.u_lower)?;
        Ok(PolicyOutput {
            features,
            normalized,
            engineering,
        })
    }
}

/// A [`ScenarioBatch`] recorded as graph constants.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioInputs {
    pub y_past: Var,
    pub y_lower: Var,
    pub y_upper: Var,
    pub u_lower: Var,
    pub u_upper: Var,
    pub d: Var,
    pub u_prev: Var,
}

impl ScenarioInputs {
    pub fn bind(g: &mut Graph, s: &ScenarioBatch) -> Self {
        Self {
            y_past: g.constant(s.y_past.clone()),
            y_lower: g.constant(s.y_lower.clone()),
            y_upper: g.constant(s.y_upper.clone()),
            u_lower: g.constant(s.u_lower.clone()),
            u_upper: g.constant(s.u_upper.clone()),
            d: g.constant(s.d.clone()),
            u_prev: g.constant(s.u_prev.clone()),
        }
    }

    pub fn features(&self) -> FeatureInputs {
        FeatureInputs {
            past_outputs: Some(self.y_past),
            lower_bounds: Some(self.y_lower),
            upper_bounds: Some(self.y_upper),
            disturbances: Some(self.d),
        }
    }
}
