//! Bias-corrected Adam.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self, key: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("{key}.lr"), "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{key}.{name}"), "must lie in [0, 1)"));
            }
        }
        if self.eps <= 0.0 {
            return Err(Error::config(format!("{key}.eps"), "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Moments {
    first: Tensor,
    second: Tensor,
}

/// Optimizer state: per-parameter moment estimates keyed by parameter name,
/// plus the shared step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Change the learning rate for subsequent steps (schedules).
    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update of every parameter in `params` using gradients looked up by
    /// name. The step counter advances once per call.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Tensor)>,
        grads: &Gradients,
    ) -> Result<()> {
        let params: Vec<(String, &mut Tensor)> = params.into_iter().collect();
        for (name, p) in &params {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("no gradient for parameter `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::Dimension(format!(
                    "gradient for `{name}` is {}x{}, parameter is {}x{}",
                    g.rows(),
                    g.cols(),
                    p.rows(),
                    p.cols()
                )));
            }
        }
        self.step += 1;
        for (name, p) in params {
            let g = grads.get(&name).expect("checked above");
            self.update(&name, p, g)?;
        }
        Ok(())
    }

    /// Single-tensor update without touching the step counter; callers using
    /// this directly must call [`Adam::advance`] first.
    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if self.step == 0 {
            return Err(Error::Contract(
                "Adam::update before the first advance".into(),
            ));
        }
        if grad.shape() != param.shape() {
            return Err(Error::Dimension(format!(
                "gradient for `{name}` does not match its parameter shape"
            )));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let (rows, cols) = param.shape();
        let m = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| Moments {
                first: Tensor::zeros(rows, cols),
                second: Tensor::zeros(rows, cols),
            });
        if m.first.shape() != param.shape() {
            return Err(Error::Dimension(format!(
                "moment estimates for `{name}` have a stale shape"
            )));
        }
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let first = m.first.data_mut();
        let second = m.second.data_mut();
        for (i, (p, g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
            first[i] = beta1 * first[i] + (1.0 - beta1) * g;
            second[i] = beta2 * second[i] + (1.0 - beta2) * g * g;
            let m_hat = first[i] / c1;
            let v_hat = second[i] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}
