//! Central finite-difference check of [`Graph::backward`].

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::blocks::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Pass iff the max relative error is strictly below this.
    pub tol: f64,
    /// Denominator floor for the relative error, so entries with a near-zero
    /// gradient are compared on an absolute scale of `floor`.
    pub floor: f64,
    /// Check at most this many randomly chosen scalar entries (all if `None`).
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tol: 1e-5,
            floor: 1e-3,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

fn evaluate<F>(
    f: &F,
    params: &[(String, Tensor)],
    with_grad: bool,
) -> Result<(f64, Option<Vec<Tensor>>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = params
        .iter()
        .map(|(name, t)| g.param(name.clone(), t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut g, &vars)?;
    let value = g.value(loss).item()?;
    if !with_grad {
        return Ok((value, None));
    }
    let grads = g.backward(loss)?;
    let out = params
        .iter()
        .map(|(name, _)| grads.get(name).cloned().expect("registered"))
        .collect();
    Ok((value, Some(out)))
}

/// Compare reverse-mode gradients of `f` at `params` with central differences.
///
/// `f` receives the graph and the parameter handles (in `params` order) and
/// must return a scalar loss. It is evaluated twice at the base point; any
/// difference in the loss bits is reported as a contract error.
pub fn grad_check<F>(
    f: F,
    params: &[(String, Tensor)],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_with(
        |work, with_grad| evaluate(&f, work, with_grad),
        params,
        opts,
    )
}

/// [`grad_check`] for a whole [`Parameters`] model. `f` binds the model
/// itself (trainable, without a name prefix) plus anything else it needs, and
/// returns a scalar loss. Perturbations go through `params_mut` on a copy, so
/// the check covers the model's own bind path.
pub fn grad_check_model<P, F>(model: &P, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: Fn(&mut Graph, &P) -> Result<Var>,
{
    let params: Vec<(String, Tensor)> = model
        .params()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let eval = |work: &[(String, Tensor)], with_grad: bool| -> Result<(f64, Option<Vec<Tensor>>)> {
        let mut m = model.clone();
        for ((_, dst), (_, src)) in m.params_mut().into_iter().zip(work) {
            dst.data_mut().copy_from_slice(src.data());
        }
        let mut g = Graph::new();
        let loss = f(&mut g, &m)?;
        let value = g.value(loss).item()?;
        if !with_grad {
            return Ok((value, None));
        }
        let grads = g.backward(loss)?;
        // a parameter the loss never bound has zero analytic gradient; the
        // numeric side then decides whether that is right
        let out = work
            .iter()
            .map(|(name, t)| {
                grads
                    .get(name)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect();
        Ok((value, Some(out)))
    };
    check_with(eval, &params, opts)
}

fn check_with<E>(
    eval: E,
    params: &[(String, Tensor)],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    E: Fn(&[(String, Tensor)], bool) -> Result<(f64, Option<Vec<Tensor>>)>,
{
    if !(opts.step > 0.0) {
        return Err(Error::Contract(
            "finite-difference step must be positive".into(),
        ));
    }
    let (base, analytic) = eval(params, true)?;
    let (again, _) = eval(params, false)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Contract(format!(
            "function is not deterministic: {base} vs {again}"
        )));
    }
    let analytic = analytic.expect("requested");

    let total: usize = params.iter().map(|(_, t)| t.len()).sum();
    let mut entries: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, (_, t))| (0..t.len()).map(move |i| (p, i)))
        .collect();
    if let Some(limit) = opts.max_entries {
        if limit < total {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut picked: Vec<usize> = sample(&mut rng, total, limit).into_vec();
            picked.sort_unstable();
            entries = picked.into_iter().map(|k| entries[k]).collect();
        }
    }

    let mut per_param: Vec<ParamCheck> = params
        .iter()
        .map(|(n, _)| ParamCheck {
            name: n.clone(),
            checked: 0,
            max_rel_error: 0.0,
        })
        .collect();
    let mut work: Vec<(String, Tensor)> = params.to_vec();
    for (p, i) in entries {
        let orig = work[p].1.data()[i];
        work[p].1.data_mut()[i] = orig + opts.step;
        let (plus, _) = eval(&work, false)?;
        work[p].1.data_mut()[i] = orig - opts.step;
        let (minus, _) = eval(&work, false)?;
        work[p].1.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic[p].data()[i];
        let denom = a.abs().max(numeric.abs()).max(opts.floor);
        let err = (a - numeric).abs() / denom;
        let rec = &mut per_param[p];
        rec.checked += 1;
        rec.max_rel_error = rec
            .max_rel_error
            .max(if err.is_nan() { f64::INFINITY } else { err });
    }
    let max_rel_error = per_param.iter().fold(0.0f64, |m, r| m.max(r.max_rel_error));
    Ok(GradCheckReport {
        params: per_param,
        max_rel_error,
        tol: opts.tol,
        passed: max_rel_error < opts.tol,
    })
}
