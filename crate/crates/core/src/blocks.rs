//! Parametrized building blocks shared by the state-space model and the
//! control law: affine maps, multilayer perceptrons and a dynamics matrix that
//! is stable by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Anything holding named trainable tensors.
pub trait Parameters {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn leaf(g: &mut Graph, name: String, value: &Tensor, trainable: bool) -> Result<Var> {
    if trainable {
        g.param(name, value.clone())
    } else {
        Ok(g.constant(value.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Gelu => g.gelu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Identity => Ok(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    UniformFanIn(usize),
    Zeros,
}

pub fn init_with<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    scheme: InitScheme,
    rng: &mut R,
) -> Tensor {
    match scheme {
        InitScheme::Zeros => Tensor::zeros(rows, cols),
        InitScheme::UniformFanIn(fan_in) => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            Tensor::new(rows, cols, data).expect("positive dims")
        }
    }
}

/// Seeded initialization of a single tensor.
pub fn init_params(rows: usize, cols: usize, scheme: InitScheme, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_with(rows, cols, scheme, &mut rng)
}

/// `x -> W x + b` with `W: out x in`, `b: out x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub weight: Tensor,
    pub bias: Tensor,
}

pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let wx = g.matmul(self.weight, x)?;
        g.add(wx, self.bias)
    }
}

impl LinearMap {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let scheme = InitScheme::UniformFanIn(input);
        Self {
            weight: init_with(output, input, scheme, rng),
            bias: init_with(output, 1, scheme, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(output, input),
            bias: Tensor::zeros(output, 1),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if bias.shape() != (weight.rows(), 1) {
            return Err(Error::Dimension(format!(
                "bias must be {}x1 for a {}x{} weight",
                weight.rows(),
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str, trainable: bool) -> Result<BoundLinear> {
        Ok(BoundLinear {
            weight: leaf(g, join(prefix, "weight"), &self.weight, trainable)?,
            bias: leaf(g, join(prefix, "bias"), &self.bias, trainable)?,
        })
    }
}

impl Parameters for LinearMap {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}

/// Fully connected network: activation after every hidden layer, affine head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LinearMap>,
    activation: Activation,
}

pub struct BoundMlp {
    layers: Vec<BoundLinear>,
    activation: Activation,
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i < last {
                h = self.activation.apply(g, h)?;
            }
        }
        Ok(h)
    }
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Dimension(format!(
                "MLP needs at least input and output sizes, all positive; got {sizes:?}"
            )));
        }
        let layers = sizes
            .windows(2)
            .map(|w| LinearMap::new(w[0], w[1], rng))
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Dimension(format!("invalid MLP sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| LinearMap::zeros(w[0], w[1]))
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<LinearMap>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("MLP needs at least one layer".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Dimension(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].output_dim(),
                    i + 1,
                    w[1].input_dim()
                )));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[LinearMap] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LinearMap] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Layer sizes `[input, hidden..., output]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.output_dim()));
        s
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str, trainable: bool) -> Result<BoundMlp> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.bind(g, &join(prefix, &format!("layers.{i}")), trainable))
            .collect::<Result<_>>()?;
        Ok(BoundMlp {
            layers,
            activation: self.activation,
        })
    }

    /// Evaluate on a `input x batch` tensor outside any training graph.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "MLP expects {} input rows, got {}",
                self.input_dim(),
                x.rows()
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, "", false)?;
        let xv = g.constant(x.clone());
        let y = bound.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }
}

/// Architecture of an [`Mlp`] without its weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpShape {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl Mlp {
    pub fn shape(&self) -> MlpShape {
        MlpShape {
            sizes: self.sizes(),
            activation: self.activation,
        }
    }

    pub fn from_shape(shape: &MlpShape) -> Result<Self> {
        Mlp::zeros(&shape.sizes, shape.activation)
    }
}

/// Exact parameter count of an MLP with the given layer sizes:
/// `sum_l (out_l * in_l + out_l)`.
pub fn mlp_param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Parameters for Mlp {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params()
                    .into_iter()
                    .map(move |(n, t)| (join(&format!("layers.{i}"), &n), t))
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params_mut()
                    .into_iter()
                    .map(move |(n, t)| (join(&format!("layers.{i}"), &n), t))
            })
            .collect()
    }
}

/// Nonnegative dynamics matrix with row sums confined to
/// `[lambda_min, lambda_max]`:
///
/// `A[i, :] = lambda_i * softmax(M[i, :])`,
/// `lambda_i = lambda_min + (lambda_max - lambda_min) * sigmoid(s_i)`.
///
/// Since `A >= 0`, its spectral radius is bounded by the largest row sum, so
/// `rho(A) <= lambda_max < 1` for any finite `M`, `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct StableDynamicsMap {
    pub mix: Tensor,
    pub damping: Tensor,
    lambda_min: f64,
    lambda_max: f64,
}

fn check_lambda(lambda_min: f64, lambda_max: f64) -> Result<()> {
    if !(0.0 <= lambda_min && lambda_min < lambda_max && lambda_max < 1.0) {
        return Err(Error::config(
            "ssm.lambda",
            format!("need 0 <= lambda_min < lambda_max < 1, got [{lambda_min}, {lambda_max}]"),
        ));
    }
    Ok(())
}

impl StableDynamicsMap {
    pub fn new<R: Rng + ?Sized>(
        n: usize,
        lambda_min: f64,
        lambda_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_lambda(lambda_min, lambda_max)?;
        Ok(Self {
            mix: init_with(n, n, InitScheme::UniformFanIn(n), rng),
            damping: Tensor::zeros(n, 1),
            lambda_min,
            lambda_max,
        })
    }

    pub fn from_parts(
        mix: Tensor,
        damping: Tensor,
        lambda_min: f64,
        lambda_max: f64,
    ) -> Result<Self> {
        check_lambda(lambda_min, lambda_max)?;
        if mix.rows() != mix.cols() || damping.shape() != (mix.rows(), 1) {
            return Err(Error::Dimension(format!(
                "stable map needs square mix and matching damping column, got {}x{} and {}x{}",
                mix.rows(),
                mix.cols(),
                damping.rows(),
                damping.cols()
            )));
        }
        Ok(Self {
            mix,
            damping,
            lambda_min,
            lambda_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.mix.rows()
    }

    pub fn lambda_bounds(&self) -> (f64, f64) {
        (self.lambda_min, self.lambda_max)
    }

    /// Record `A` on `g` and return its handle.
    pub fn bind(&self, g: &mut Graph, prefix: &str, trainable: bool) -> Result<Var> {
        let mix = leaf(g, join(prefix, "mix"), &self.mix, trainable)?;
        let damping = leaf(g, join(prefix, "damping"), &self.damping, trainable)?;
        let rows = g.softmax_rows(mix)?;
        let sig = g.sigmoid(damping)?;
        let lambda = g.affine(sig, self.lambda_max - self.lambda_min, self.lambda_min)?;
        g.hadamard(rows, lambda)
    }

    pub fn materialize(&self) -> Result<Tensor> {
        let mut g = Graph::new();
        let a = self.bind(&mut g, "", false)?;
        Ok(g.value(a).clone())
    }
}

impl Parameters for StableDynamicsMap {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("mix".into(), &self.mix), ("damping".into(), &self.damping)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("mix".into(), &mut self.mix),
            ("damping".into(), &mut self.damping),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralRadius {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Power-iteration estimate of the dominant eigenvalue magnitude.
///
/// Uses the infinity-norm growth ratio `|A v| / |v|`, which for a
/// nonnegative matrix never exceeds the largest row sum.
pub fn spectral_radius(a: &Tensor, iters: usize, tol: f64) -> Result<SpectralRadius> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension(format!(
            "spectral radius of a non-square {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    let mut v = vec![1.0; n];
    let mut prev = f64::NAN;
    for k in 1..=iters.max(1) {
        let mut w = vec![0.0; n];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = a.row_values(i).iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        let norm = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if norm == 0.0 {
            return Ok(SpectralRadius {
                value: 0.0,
                converged: true,
                iterations: k,
            });
        }
        // v is kept at unit infinity norm, so the growth ratio is `norm`
        let est = norm;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if (est - prev).abs() <= tol * est.max(1.0) {
            return Ok(SpectralRadius {
                value: est,
                converged: true,
                iterations: k,
            });
        }
        prev = est;
    }
    Ok(SpectralRadius {
        value: prev,
        converged: false,
        iterations: iters,
    })
}
