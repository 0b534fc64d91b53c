//! Trainable layers: linear maps, graph convolution, spectrally normalized
//! linear maps and batch normalization.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{FedniError, Result};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// A trainable tensor together with its gradient and Adam moments.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    id: u64,
    pub value: Matrix,
    pub grad: Matrix,
    pub adam_m: Matrix,
    pub adam_v: Matrix,
    pub step_count: u64,
}

impl ParamTensor {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            id: NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed),
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    /// Glorot-uniform initialisation for an `fan_in x fan_out` weight.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self::new(Matrix::from_vec(fan_in, fan_out, data).expect("glorot shape"))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Matrix::zeros(rows, cols))
    }

    /// Identity of this tensor on a [`Tape`]; clones share it.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Whether a layer's parameters take part in the current backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bind {
    Train,
    Frozen,
}

impl Bind {
    fn bind(self, tape: &mut Tape, p: &ParamTensor) -> Var {
        match self {
            Bind::Train => tape.param(p),
            Bind::Frozen => tape.frozen(p),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    /// Exponential linear unit with alpha = 1.
    Elu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Elu => tape.elu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    GraphConv,
    Linear,
    SnLinear,
    BatchNorm,
    Activation(Activation),
    ConcatNoise(usize),
}

/// One row of an architecture table.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind,
            in_dim,
            out_dim,
        }
    }
}

/// Checks that consecutive layers agree on their widths.
pub fn check_chain(specs: &[LayerSpec]) -> Result<()> {
    for pair in specs.windows(2) {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(FedniError::Dimension(format!(
                "{:?} emits {} features but {:?} expects {}",
                pair[0].kind, pair[0].out_dim, pair[1].kind, pair[1].in_dim
            )));
        }
    }
    Ok(())
}

/// Named access to every tensor a model carries, used for serialization and
/// optimisation. `state` includes non-trainable buffers; `params_mut` only the
/// tensors Adam updates.
pub trait Module {
    fn state(&self) -> Vec<(String, &Matrix)>;
    fn state_mut(&mut self) -> Vec<(String, &mut Matrix)>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn parameter_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }
}

/// `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: ParamTensor::glorot(in_dim, out_dim, rng),
            bias: ParamTensor::zeros(1, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, bind: Bind) -> Var {
        let w = bind.bind(tape, &self.weight);
        let b = bind.bind(tape, &self.bias);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }

    pub(crate) fn push_state<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        out.push((format!("{prefix}.weight"), &self.weight.value));
        out.push((format!("{prefix}.bias"), &self.bias.value));
    }

    pub(crate) fn push_state_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Matrix)>,
    ) {
        out.push((format!("{prefix}.weight"), &mut self.weight.value));
        out.push((format!("{prefix}.bias"), &mut self.bias.value));
    }

    pub(crate) fn push_params<'a>(&'a mut self, out: &mut Vec<&'a mut ParamTensor>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Graph convolution `act(Â Z Θ)` without bias.
#[derive(Clone, Debug)]
pub struct GraphConv {
    pub weight: ParamTensor,
    pub activation: Activation,
}

impl GraphConv {
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: ParamTensor::glorot(in_dim, out_dim, rng),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    /// `a_norm` must already be bound on the tape (normally as a constant).
    pub fn forward(&self, tape: &mut Tape, z: Var, a_norm: Var, bind: Bind) -> Var {
        let w = bind.bind(tape, &self.weight);
        // Multiply through the narrower side first.
        let pre = if self.out_dim() <= self.in_dim() {
            let zw = tape.matmul(z, w);
            tape.matmul(a_norm, zw)
        } else {
            let az = tape.matmul(a_norm, z);
            tape.matmul(az, w)
        };
        self.activation.apply(tape, pre)
    }

    pub(crate) fn push_state<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        out.push((format!("{prefix}.weight"), &self.weight.value));
    }

    pub(crate) fn push_state_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Matrix)>,
    ) {
        out.push((format!("{prefix}.weight"), &mut self.weight.value));
    }

    pub(crate) fn push_params<'a>(&'a mut self, out: &mut Vec<&'a mut ParamTensor>) {
        out.push(&mut self.weight);
    }
}

/// Checked, tape-free graph convolution `act(a_norm · z · w)`.
pub fn gcn_layer_forward(
    z: &Matrix,
    a_norm: &Matrix,
    w: &ParamTensor,
    activation: Activation,
) -> Result<Matrix> {
    let n = z.rows();
    if a_norm.shape() != (n, n) {
        return Err(FedniError::Dimension(format!(
            "normalized adjacency is {:?} but there are {n} nodes",
            a_norm.shape()
        )));
    }
    if w.value.rows() != z.cols() {
        return Err(FedniError::Dimension(format!(
            "weight expects {} input features, got {}",
            w.value.rows(),
            z.cols()
        )));
    }
    if !z.is_finite() || !a_norm.is_finite() || !w.value.is_finite() {
        return Err(FedniError::Numeric(
            "non-finite input to graph convolution".into(),
        ));
    }
    let layer = GraphConv {
        weight: w.clone(),
        activation,
    };
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let av = tape.constant(a_norm.clone());
    let out = layer.forward(&mut tape, zv, av, Bind::Frozen);
    Ok(tape.value(out).clone())
}

/// Outcome of one spectral normalization.
#[derive(Clone, Debug)]
pub struct SpectralNorm {
    pub normalized: Matrix,
    pub sigma: f64,
    /// Set when the weight is (numerically) zero; `normalized` is then the
    /// input unchanged.
    pub degenerate: bool,
}

/// Divides `w` (shape `in x out`) by its largest singular value, estimated by
/// `power_iters` rounds of power iteration starting from the persistent
/// vector `u` (length `out`), which is updated in place.
pub fn spectral_normalize(w: &Matrix, u: &mut [f64], power_iters: usize) -> SpectralNorm {
    assert!(power_iters >= 1, "power_iters must be at least 1");
    assert_eq!(u.len(), w.cols(), "singular vector length mismatch");
    let sigma = power_iterate(w, u, power_iters);
    match sigma {
        Some(s) => SpectralNorm {
            normalized: w.scale(1.0 / s),
            sigma: s,
            degenerate: false,
        },
        None => SpectralNorm {
            normalized: w.clone(),
            sigma: 0.0,
            degenerate: true,
        },
    }
}

const SN_EPS: f64 = 1e-12;

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > SN_EPS {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Runs power iteration and returns σ = ‖W u‖ for the updated `u`, or `None`
/// for a zero matrix.
fn power_iterate(w: &Matrix, u: &mut [f64], iters: usize) -> Option<f64> {
    if normalize(u) <= SN_EPS {
        let c = 1.0 / (u.len() as f64).sqrt();
        u.iter_mut().for_each(|x| *x = c);
    }
    let ucol = |u: &[f64]| Matrix::column_vector(u);
    for _ in 0..iters {
        let mut v = w.matmul(&ucol(u)).into_vec();
        if normalize(&mut v) <= SN_EPS {
            return None;
        }
        let mut next = w.t_matmul(&Matrix::column_vector(&v)).into_vec();
        if normalize(&mut next) <= SN_EPS {
            return None;
        }
        u.copy_from_slice(&next);
    }
    sigma_estimate(w, u)
}

fn sigma_estimate(w: &Matrix, u: &[f64]) -> Option<f64> {
    let s = w.matmul(&Matrix::column_vector(u)).frobenius_norm();
    (s > SN_EPS).then_some(s)
}

/// Linear map whose weight is divided by its spectral norm at every forward.
#[derive(Clone, Debug)]
pub struct SnLinear {
    pub linear: Linear,
    /// Persistent right-singular-vector estimate (length `out_dim`).
    pub u: Matrix,
}

impl SnLinear {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let linear = Linear::new(in_dim, out_dim, rng);
        let mut u: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut u);
        Self {
            linear,
            u: Matrix::row_vector(&u),
        }
    }

    /// Applies the layer with its weight divided by `σ = ‖W u‖`. With
    /// `power_iters > 0` the persistent vector is refined first; `u` is then
    /// held fixed while σ is differentiated with respect to `W`.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, bind: Bind, power_iters: usize) -> Var {
        let live = if power_iters > 0 {
            power_iterate(&self.linear.weight.value, self.u.data_mut(), power_iters).is_some()
        } else {
            let mut u = self.u.data().to_vec();
            normalize(&mut u);
            sigma_estimate(&self.linear.weight.value, &u).is_some()
        };
        let w = bind.bind(tape, &self.linear.weight);
        let w = if live {
            let mut u = self.u.data().to_vec();
            normalize(&mut u);
            let u = tape.constant(Matrix::column_vector(&u));
            let wu = tape.matmul(w, u);
            let sq = tape.square(wu);
            let s = tape.sum(sq);
            let sigma = tape.sqrt(s);
            tape.div_scalar(w, sigma)
        } else {
            w
        };
        let b = bind.bind(tape, &self.linear.bias);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }

    pub(crate) fn push_state<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        self.linear.push_state(prefix, out);
        out.push((format!("{prefix}.u"), &self.u));
    }

    pub(crate) fn push_state_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Matrix)>,
    ) {
        self.linear.push_state_mut(prefix, out);
        out.push((format!("{prefix}.u"), &mut self.u));
    }

    pub(crate) fn push_params<'a>(&'a mut self, out: &mut Vec<&'a mut ParamTensor>) {
        self.linear.push_params(out);
    }
}

/// Batch normalization over rows with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamTensor,
    pub beta: ParamTensor,
    pub running_mean: Matrix,
    pub running_var: Matrix,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: ParamTensor::new(Matrix::filled(1, dim, 1.0)),
            beta: ParamTensor::zeros(1, dim),
            running_mean: Matrix::zeros(1, dim),
            running_var: Matrix::filled(1, dim, 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.value.cols()
    }

    /// Returns the output and whether training mode had to fall back to the
    /// running statistics (batch of one row).
    pub fn forward(&mut self, tape: &mut Tape, x: Var, training: bool, bind: Bind) -> (Var, bool) {
        let (n, d) = tape.value(x).shape();
        assert_eq!(d, self.dim(), "batch norm width mismatch");
        let g = bind.bind(tape, &self.gamma);
        let b = bind.bind(tape, &self.beta);
        if training && n >= 2 {
            let xv = tape.value(x);
            let mean = xv.column_means();
            let var: Vec<f64> = (0..d)
                .map(|c| {
                    (0..n)
                        .map(|r| (xv.get(r, c) - mean[c]).powi(2))
                        .sum::<f64>()
                        / n as f64
                })
                .collect();
            let unbiased = n as f64 / (n as f64 - 1.0);
            for c in 0..d {
                let rm = &mut self.running_mean.data_mut()[c];
                *rm = (1.0 - self.momentum) * *rm + self.momentum * mean[c];
                let rv = &mut self.running_var.data_mut()[c];
                *rv = (1.0 - self.momentum) * *rv + self.momentum * var[c] * unbiased;
            }
            (tape.batch_norm(x, g, b, &mean, &var, self.eps, true), false)
        } else {
            let mean = self.running_mean.data().to_vec();
            let var: Vec<f64> = self.running_var.data().iter().map(|v| v.max(0.0)).collect();
            (
                tape.batch_norm(x, g, b, &mean, &var, self.eps, false),
                training,
            )
        }
    }

    pub(crate) fn push_state<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        out.push((format!("{prefix}.gamma"), &self.gamma.value));
        out.push((format!("{prefix}.beta"), &self.beta.value));
        out.push((format!("{prefix}.running_mean"), &self.running_mean));
        out.push((format!("{prefix}.running_var"), &self.running_var));
    }

    pub(crate) fn push_state_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Matrix)>,
    ) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma.value));
        out.push((format!("{prefix}.beta"), &mut self.beta.value));
        out.push((format!("{prefix}.running_mean"), &mut self.running_mean));
        out.push((format!("{prefix}.running_var"), &mut self.running_var));
    }

    pub(crate) fn push_params<'a>(&'a mut self, out: &mut Vec<&'a mut ParamTensor>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
}
