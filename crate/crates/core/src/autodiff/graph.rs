//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in execution order, so the node list is
//! already a topological order of the computation. [`Graph::backward`] walks
//! the tape once in reverse, accumulating adjoints. Training loops build a
//! fresh graph per iteration; nothing is reused across iterations.
//!
//! Binary elementwise ops (`add`, `sub`, `hadamard`) accept a right operand of
//! shape `rows x 1` against a left operand of shape `rows x n`; the column is
//! broadcast across the batch and its adjoint is summed over columns in index
//! order.
//!
//! ```
//! use dpc::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let w = g.param("w", Tensor::scalar(3.0)).unwrap();
//! let loss = g.sum_squares(w).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get("w").unwrap().item().unwrap(), 6.0);
//! ```

use std::collections::HashMap;

use super::tensor::{kernels, Tensor};
use crate::error::{Error, Result};

/// `sqrt(2 / pi)`, used by the tanh form of GELU.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh form of GELU.
pub const GELU_CUBIC: f64 = 0.044_715;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add { a: usize, b: usize, broadcast: bool },
    Sub { a: usize, b: usize, broadcast: bool },
    Hadamard { a: usize, b: usize, broadcast: bool },
    Affine { src: usize, scale: f64 },
    ConcatRows(Vec<usize>),
    SliceRows { src: usize, start: usize },
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    Softplus(usize),
    SoftmaxRows(usize),
    Sum(usize),
    Mean(usize),
    SumSquares(usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, usize)>,
    param_index: HashMap<String, usize>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    params: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
    adjoints: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of a registered parameter. Parameters that do not influence
    /// the loss get a zero tensor of their own shape.
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].1)
    }

    /// Adjoint of any node, zero if the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.adjoints[var.0] {
            Some(t) => t.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Parameter gradients in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

fn shape_str(t: &Tensor) -> String {
    format!("{}x{}", t.rows(), t.cols())
}

fn gelu_scalar(x: f64) -> f64 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let th = u.tanh();
    let du = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_scalar(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Elementwise activations, also usable outside a graph.
pub mod scalar {
    pub fn gelu(x: f64) -> f64 {
        super::gelu_scalar(x)
    }
    pub fn sigmoid(x: f64) -> f64 {
        super::sigmoid_scalar(x)
    }
    pub fn softplus(x: f64) -> f64 {
        super::softplus_scalar(x)
    }
}

fn add_into(acc: &mut Option<Tensor>, contribution: Tensor) {
    match acc {
        Some(t) => {
            for (a, c) in t.data_mut().iter_mut().zip(contribution.data()) {
                *a += c;
            }
        }
        None => *acc = Some(contribution),
    }
}

/// Sum a `rows x n` tensor over its columns into `rows x 1`.
fn sum_columns(t: &Tensor) -> Tensor {
    let mut out = vec![0.0; t.rows()];
    for (r, o) in out.iter_mut().enumerate() {
        *o = t.row_values(r).iter().sum();
    }
    Tensor::column(&out)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Trainable leaf registered under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var> {
        let name = name.into();
        if self.param_index.contains_key(&name) {
            return Err(Error::Contract(format!(
                "parameter `{name}` registered twice"
            )));
        }
        let v = self.push(value, Op::Leaf);
        self.param_index.insert(name.clone(), self.params.len());
        self.params.push((name, v.0));
        Ok(v)
    }

    /// Names of registered parameters, in registration order.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    fn broadcast_check(&self, a: Var, b: Var, op: &str) -> Result<bool> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(false)
        } else if tb.cols() == 1 && tb.rows() == ta.rows() {
            Ok(true)
        } else {
            Err(Error::Dimension(format!(
                "{op}: shapes {} and {} are incompatible",
                shape_str(ta),
                shape_str(tb)
            )))
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let (rows, cols) = ta.shape();
        let mut out = Vec::with_capacity(rows * cols);
        if tb.shape() == ta.shape() {
            out.extend(ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)));
        } else {
            for r in 0..rows {
                let bv = tb.get(r, 0);
                out.extend(ta.row_values(r).iter().map(|x| f(*x, bv)));
            }
        }
        Tensor::new(rows, cols, out).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.broadcast_check(a, b, "add")?;
        let out = self.zip_broadcast(a, b, |x, y| x + y);
        Ok(self.push(
            out,
            Op::Add {
                a: a.0,
                b: b.0,
                broadcast,
            },
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.broadcast_check(a, b, "sub")?;
        let out = self.zip_broadcast(a, b, |x, y| x - y);
        Ok(self.push(
            out,
            Op::Sub {
                a: a.0,
                b: b.0,
                broadcast,
            },
        ))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.broadcast_check(a, b, "hadamard")?;
        let out = self.zip_broadcast(a, b, |x, y| x * y);
        Ok(self.push(
            out,
            Op::Hadamard {
                a: a.0,
                b: b.0,
                broadcast,
            },
        ))
    }

    /// `scale * x + shift`, with constant scalars.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(x).map(|v| scale * v + shift);
        Ok(self.push(out, Op::Affine { src: x.0, scale }))
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = Tensor::concat_rows(&tensors)?;
        Ok(self.push(out, Op::ConcatRows(parts.iter().map(|p| p.0).collect())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_rows(start, len)?;
        Ok(self.push(out, Op::SliceRows { src: x.0, start }))
    }

    fn unary(&mut self, x: Var, name: &str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(x);
        if !t.is_finite() {
            return Err(Error::NonFinite(format!(
                "{name} input contains NaN or Inf"
            )));
        }
        let out = t.map(f);
        Ok(self.push(out, op))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "relu", |v| v.max(0.0), Op::Relu(x.0))
    }

    /// GELU, tanh form: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "gelu", gelu_scalar, Op::Gelu(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "sigmoid", sigmoid_scalar, Op::Sigmoid(x.0))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "softplus", softplus_scalar, Op::Softplus(x.0))
    }

    /// Softmax applied independently to every row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if !t.is_finite() {
            return Err(Error::NonFinite("softmax input contains NaN or Inf".into()));
        }
        let (rows, cols) = t.shape();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = t.row_values(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            out.extend(e.into_iter().map(|v| v / s));
        }
        let out = Tensor::new(rows, cols, out)?;
        Ok(self.push(out, Op::SoftmaxRows(x.0)))
    }

    fn reduce(&mut self, x: Var, name: &str, op: Op, f: impl Fn(&Tensor) -> f64) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Dimension(format!("{name} of an empty tensor")));
        }
        let v = f(t);
        Ok(self.push(Tensor::scalar(v), op))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, "sum", Op::Sum(x.0), |t| t.sum())
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, "mean", Op::Mean(x.0), |t| t.sum() / t.len() as f64)
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, "sum_squares", Op::SumSquares(x.0), |t| {
            t.data().iter().map(|v| v * v).sum()
        })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}",
                shape_str(lt)
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let da = kernels::matmul_nt(g.data(), tb.data(), m, n, k);
                    let db = kernels::matmul_tn(ta.data(), g.data(), m, k, n);
                    add_into(&mut adj[*a], Tensor::new(m, k, da)?);
                    add_into(&mut adj[*b], Tensor::new(k, n, db)?);
                }
                Op::Add { a, b, broadcast } => {
                    let db = if *broadcast {
                        sum_columns(&g)
                    } else {
                        g.clone()
                    };
                    add_into(&mut adj[*a], g.clone());
                    add_into(&mut adj[*b], db);
                }
                Op::Sub { a, b, broadcast } => {
                    let neg = g.map(|v| -v);
                    let db = if *broadcast { sum_columns(&neg) } else { neg };
                    add_into(&mut adj[*a], g.clone());
                    add_into(&mut adj[*b], db);
                }
                Op::Hadamard { a, b, broadcast } => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (rows, cols) = ta.shape();
                    let mut da = Vec::with_capacity(rows * cols);
                    let mut db = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let gv = g.get(r, c);
                            let bv = if *broadcast {
                                tb.get(r, 0)
                            } else {
                                tb.get(r, c)
                            };
                            da.push(gv * bv);
                            db.push(gv * ta.get(r, c));
                        }
                    }
                    let db = Tensor::new(rows, cols, db)?;
                    let db = if *broadcast { sum_columns(&db) } else { db };
                    add_into(&mut adj[*a], Tensor::new(rows, cols, da)?);
                    add_into(&mut adj[*b], db);
                }
                Op::Affine { src, scale } => {
                    add_into(&mut adj[*src], g.map(|v| v * scale));
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.nodes[*p].value.rows();
                        add_into(&mut adj[*p], g.slice_rows(start, rows)?);
                        start += rows;
                    }
                }
                Op::SliceRows { src, start } => {
                    let (rows, cols) = self.nodes[*src].value.shape();
                    let mut full = Tensor::zeros(rows, cols);
                    let off = start * cols;
                    full.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                    add_into(&mut adj[*src], full);
                }
                Op::Relu(src) => {
                    let x = &self.nodes[*src].value;
                    add_into(
                        &mut adj[*src],
                        zip_map(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                    );
                }
                Op::Gelu(src) => {
                    let x = &self.nodes[*src].value;
                    add_into(
                        &mut adj[*src],
                        zip_map(&g, x, |gv, xv| gv * gelu_grad_scalar(xv)),
                    );
                }
                Op::Sigmoid(src) => {
                    let y = &node.value;
                    add_into(
                        &mut adj[*src],
                        zip_map(&g, y, |gv, yv| gv * yv * (1.0 - yv)),
                    );
                }
                Op::Softplus(src) => {
                    let x = &self.nodes[*src].value;
                    add_into(
                        &mut adj[*src],
                        zip_map(&g, x, |gv, xv| gv * sigmoid_scalar(xv)),
                    );
                }
                Op::SoftmaxRows(src) => {
                    let y = &node.value;
                    let (rows, cols) = y.shape();
                    let mut dx = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        let (yr, gr) = (y.row_values(r), g.row_values(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                    }
                    add_into(&mut adj[*src], Tensor::new(rows, cols, dx)?);
                }
                Op::Sum(src) => {
                    let (r, c) = self.nodes[*src].value.shape();
                    add_into(&mut adj[*src], Tensor::filled(r, c, g.data()[0]));
                }
                Op::Mean(src) => {
                    let (r, c) = self.nodes[*src].value.shape();
                    add_into(
                        &mut adj[*src],
                        Tensor::filled(r, c, g.data()[0] / (r * c) as f64),
                    );
                }
                Op::SumSquares(src) => {
                    let gv = g.data()[0];
                    let x = &self.nodes[*src].value;
                    add_into(&mut adj[*src], x.map(|v| 2.0 * v * gv));
                }
            }
            adj[i] = Some(g);
        }

        let shapes: Vec<(usize, usize)> = self.nodes.iter().map(|n| n.value.shape()).collect();
        let params = self
            .params
            .iter()
            .map(|(name, idx)| {
                let t = adj[*idx].clone().unwrap_or_else(|| {
                    let (r, c) = shapes[*idx];
                    Tensor::zeros(r, c)
                });
                (name.clone(), t)
            })
            .collect();
        Ok(Gradients {
            params,
            index: self.param_index.clone(),
            adjoints: adj,
            shapes,
        })
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| f(*a, *b))
        .collect();
    Tensor::new(g.rows(), g.cols(), data).expect("shape preserved")
}
