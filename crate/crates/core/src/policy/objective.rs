//! Economic control objective with soft comfort and actuator constraints.

use serde::{Deserialize, Serialize};

use super::penalty::{penalty_lower, penalty_upper, PenaltyActivation};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Control effort `|u|^2`.
    pub q_umin: f64,
    /// Control rate `|u_k - u_{k-1}|^2`.
    pub q_du: f64,
    /// Output bound violations.
    pub q_y: f64,
    /// Control bound violations.
    pub q_u: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            q_umin: 1.0,
            q_du: 1.0,
            q_y: 50.0,
            q_u: 50.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self, key: &str) -> Result<()> {
        for (name, v) in [
            ("q_umin", self.q_umin),
            ("q_du", self.q_du),
            ("q_y", self.q_y),
            ("q_u", self.q_u),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(
                    format!("{key}.{name}"),
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            q_umin: self.q_umin * c,
            q_du: self.q_du * c,
            q_y: self.q_y * c,
            q_u: self.q_u * c,
        }
    }
}

/// Stacked bound trajectories, `N * n x B`, oldest step first.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsTrajectory {
    pub y_lower: Tensor,
    pub y_upper: Tensor,
    pub u_lower: Tensor,
    pub u_upper: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundVars {
    pub y_lower: Var,
    pub y_upper: Var,
    pub u_lower: Var,
    pub u_upper: Var,
}

impl BoundsTrajectory {
    pub fn validate(&self) -> Result<()> {
        for (name, lo, hi) in [
            ("output", &self.y_lower, &self.y_upper),
            ("control", &self.u_lower, &self.u_upper),
        ] {
            if lo.shape() != hi.shape() {
                return Err(Error::Dimension(format!("{name} bound shapes differ")));
            }
            if lo.data().iter().zip(hi.data()).any(|(l, h)| !(l <= h)) {
                return Err(Error::Contract(format!(
                    "{name} lower bound exceeds upper bound"
                )));
            }
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> BoundVars {
        BoundVars {
            y_lower: g.constant(self.y_lower.clone()),
            y_upper: g.constant(self.y_upper.clone()),
            u_lower: g.constant(self.u_lower.clone()),
            u_upper: g.constant(self.u_upper.clone()),
        }
    }
}

/// The weighted terms, each already divided by `n * N`.
#[derive(Debug, Clone, Copy)]
pub struct EconomicTerms {
    pub total: Var,
    pub energy: Var,
    pub smoothness: Var,
    pub output_violation: Var,
    pub control_violation: Var,
}

/// `L = 1/(nN) sum_i sum_k [ Q_umin |u|^2 + Q_du |u_k - u_{k-1}|^2
///      + Q_y (|p(y, y_lo)|^2 + |p(y, y_hi)|^2) + Q_u (|p(u, u_lo)|^2 + |p(u, u_hi)|^2) ]`
///
/// `u` is `N * n_u x n`, `y` is `N * n_y x n`, `u_prev` (`n_u x n`) is the
/// control preceding the horizon. Units are whatever the caller supplies;
/// bounds must share them.
#[allow(clippy::too_many_arguments)]
pub fn economic_loss(
    g: &mut Graph,
    u: Var,
    y: Var,
    bounds: &BoundVars,
    weights: &LossWeights,
    u_prev: Var,
    n_u: usize,
    act: PenaltyActivation,
) -> Result<EconomicTerms> {
    weights.validate("loss")?;
    let (rows, n) = g.shape(u);
    if n_u == 0 || rows % n_u != 0 {
        return Err(Error::Dimension(format!(
            "{rows} control rows is not a multiple of n_u = {n_u}"
        )));
    }
    let horizon = rows / n_u;
    if g.shape(u_prev) != (n_u, n) {
        let (r, c) = g.shape(u_prev);
        return Err(Error::Dimension(format!(
            "u_prev is {r}x{c}, expected {n_u}x{n}"
        )));
    }
    if g.shape(y).1 != n {
        return Err(Error::Dimension(
            "output and control batch sizes differ".into(),
        ));
    }
    let scale = 1.0 / (n * horizon) as f64;

    let energy = g.sum_squares(u)?;
    let energy = g.scale(energy, weights.q_umin * scale)?;

    let shifted = if horizon > 1 {
        let head = g.slice_rows(u, 0, (horizon - 1) * n_u)?;
        g.concat_rows(&[u_prev, head])?
    } else {
        u_prev
    };
    let du = g.sub(u, shifted)?;
    let smooth = g.sum_squares(du)?;
    let smoothness = g.scale(smooth, weights.q_du * scale)?;

    let weighted_pair = |g: &mut Graph, x: Var, lo: Var, hi: Var, q: f64| -> Result<Var> {
        let a = penalty_lower(g, x, lo, act)?;
        let b = penalty_upper(g, x, hi, act)?;
        let sa = g.sum_squares(a)?;
        let sb = g.sum_squares(b)?;
        let s = g.add(sa, sb)?;
        g.scale(s, q * scale)
    };
    let output_violation = weighted_pair(g, y, bounds.y_lower, bounds.y_upper, weights.q_y)?;
    let control_violation = weighted_pair(g, u, bounds.u_lower, bounds.u_upper, weights.q_u)?;

    let t = g.add(energy, smoothness)?;
    let t = g.add(t, output_violation)?;
    let total = g.add(t, control_violation)?;
    Ok(EconomicTerms {
        total,
        energy,
        smoothness,
        output_violation,
        control_violation,
    })
}
