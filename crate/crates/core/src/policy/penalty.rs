//! Soft constraint penalties `p(x, upper) = act(x - upper)` and
//! `p(x, lower) = act(lower - x)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Activation turning a signed constraint residual into a violation measure.
/// Only `Relu` is exactly zero on the feasible set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyActivation {
    #[default]
    Relu,
    Gelu,
    Softplus,
}

impl PenaltyActivation {
    fn apply(self, g: &mut Graph, r: Var) -> Result<Var> {
        match self {
            PenaltyActivation::Relu => g.relu(r),
            PenaltyActivation::Gelu => g.gelu(r),
            PenaltyActivation::Softplus => g.softplus(r),
        }
    }
}

fn check(g: &Graph, x: Var, bound: Var) -> Result<()> {
    let (xs, bs) = (g.shape(x), g.shape(bound));
    if xs != bs && bs != (xs.0, 1) {
        return Err(Error::Dimension(format!(
            "penalty operand {}x{} does not match bound {}x{}",
            xs.0, xs.1, bs.0, bs.1
        )));
    }
    Ok(())
}

/// Violation of `x <= upper`. `upper` may also be a column broadcast across
/// the batch.
pub fn penalty_upper(g: &mut Graph, x: Var, upper: Var, act: PenaltyActivation) -> Result<Var> {
    check(g, x, upper)?;
    let r = g.sub(x, upper)?;
    act.apply(g, r)
}

/// Violation of `x >= lower`.
pub fn penalty_lower(g: &mut Graph, x: Var, lower: Var, act: PenaltyActivation) -> Result<Var> {
    check(g, x, lower)?;
    let r = g.sub(x, lower)?;
    let r = g.scale(r, -1.0)?;
    act.apply(g, r)
}
