//! Tape-based reverse-mode differentiation over whole matrices.
//!
//! The op set is deliberately small: it covers the graph-convolution
//! encoders, MLP heads, batch normalization and the losses used by the
//! inpainting GAN and the node classifier, and nothing more. Every op records
//! its inputs by index; [`Tape::backward`] walks the records in reverse.

use std::collections::HashMap;

use super::layers::ParamTensor;
use super::matrix::Matrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Elu(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    DivScalar(Var, Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    SelectCol(Var, usize),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<u64, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable leaf.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a trainable parameter. Binding the same parameter twice returns
    /// the same variable so gradients from every use accumulate.
    pub fn param(&mut self, p: &ParamTensor) -> Var {
        if let Some(&v) = self.params.get(&p.id()) {
            return v;
        }
        let v = self.leaf(p.value.clone());
        self.params.insert(p.id(), v);
        v
    }

    /// Binds a parameter as a constant (used when another network's loss
    /// flows through this one without updating it).
    pub fn frozen(&mut self, p: &ParamTensor) -> Var {
        self.constant(p.value.clone())
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar node");
        m.get(0, 0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).hadamard(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// Adds a 1xC row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(row);
        assert_eq!(bv.rows(), 1, "add_row expects a 1xC bias");
        assert_eq!(bv.cols(), xv.cols(), "add_row width mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        self.push(out, Op::AddRow(x, row), rg)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x).map(|a| scale * a + shift);
        let rg = self.rg(x);
        self.push(v, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(elu);
        let rg = self.rg(x);
        self.push(v, Op::Elu(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        let rg = self.rg(x);
        self.push(v, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(v, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(v, Op::Sigmoid(x), rg)
    }

    /// `log(sigmoid(x))`, computed without forming the sigmoid.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(log_sigmoid);
        let rg = self.rg(x);
        self.push(v, Op::LogSigmoid(x), rg)
    }

    /// Natural log; inputs must be strictly positive.
    pub fn log(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert!(
            xv.data().iter().all(|&a| a > 0.0),
            "log of a non-positive value"
        );
        let v = xv.map(f64::ln);
        let rg = self.rg(x);
        self.push(v, Op::Log(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * a);
        let rg = self.rg(x);
        self.push(v, Op::Square(x), rg)
    }

    /// Elementwise square root; inputs must be strictly positive.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert!(
            xv.data().iter().all(|&a| a > 0.0),
            "sqrt of a non-positive value"
        );
        let v = xv.map(f64::sqrt);
        let rg = self.rg(x);
        self.push(v, Op::Sqrt(x), rg)
    }

    /// `x / s` for a 1×1 `s`.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.value(s).shape(), (1, 1), "divisor must be a scalar");
        let d = self.value(s).get(0, 0);
        let v = self.value(x).scale(1.0 / d);
        let rg = self.rg(x) || self.rg(s);
        self.push(v, Op::DivScalar(x, s), rg)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).map(|a| a.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(v, Op::Clamp(x, lo, hi), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(x).sum());
        let rg = self.rg(x);
        self.push(v, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert!(!xv.is_empty(), "mean of an empty matrix");
        let v = Matrix::filled(1, 1, xv.sum() / xv.len() as f64);
        let rg = self.rg(x);
        self.push(v, Op::Mean(x), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).hstack(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::ConcatCols(a, b), rg)
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let v = self.value(x).select_rows(idx);
        let rg = self.rg(x);
        self.push(v, Op::GatherRows(x, idx.to_vec()), rg)
    }

    pub fn select_col(&mut self, x: Var, c: usize) -> Var {
        let v = Matrix::column_vector(&self.value(x).column(c));
        let rg = self.rg(x);
        self.push(v, Op::SelectCol(x, c), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.rg(x);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(x);
        self.push(out, Op::LogSoftmaxRows(x), rg)
    }

    /// Normalizes each column of `x` by the given statistics and applies the
    /// learnable affine map. With `batch_stats`, the statistics are the batch
    /// mean and biased variance and their dependence on `x` is differentiated.
    pub(crate) fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
        batch_stats: bool,
    ) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        assert_eq!(mean.len(), d);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Matrix::zeros(n, d);
        for r in 0..n {
            for c in 0..d {
                xhat.set(r, c, (xv.get(r, c) - mean[c]) * inv_std[c]);
            }
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut out = Matrix::zeros(n, d);
        for r in 0..n {
            for c in 0..d {
                out.set(r, c, g.get(0, c) * xhat.get(r, c) + b.get(0, c));
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward expects a scalar loss"
        );
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let y = &node.value;
            let send = |grads: &mut Vec<Option<Matrix>>, v: Var, d: Matrix| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        send(&mut grads, *a, g.matmul_t(self.value(*b)));
                    }
                    if self.rg(*b) {
                        send(&mut grads, *b, self.value(*a).t_matmul(&g));
                    }
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    send(&mut grads, *a, g.hadamard(self.value(*b)));
                    send(&mut grads, *b, g.hadamard(self.value(*a)));
                }
                Op::AddRow(x, row) => {
                    let sums = Matrix::row_vector(&column_sums(&g));
                    send(&mut grads, *row, sums);
                    send(&mut grads, *x, g);
                }
                Op::Affine(x, s) => send(&mut grads, *x, g.scale(*s)),
                Op::Elu(x) => {
                    let d = g.zip_map(y, |gv, yv| if yv > 0.0 { gv } else { gv * (yv + 1.0) });
                    send(&mut grads, *x, d);
                }
                Op::Relu(x) => {
                    let d = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    send(&mut grads, *x, d);
                }
                Op::Tanh(x) => send(&mut grads, *x, g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv))),
                Op::Sigmoid(x) => send(&mut grads, *x, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv))),
                Op::LogSigmoid(x) => {
                    let d = g.zip_map(self.value(*x), |gv, xv| gv * sigmoid(-xv));
                    send(&mut grads, *x, d);
                }
                Op::Log(x) => send(&mut grads, *x, g.zip_map(self.value(*x), |gv, xv| gv / xv)),
                Op::Square(x) => send(
                    &mut grads,
                    *x,
                    g.zip_map(self.value(*x), |gv, xv| 2.0 * gv * xv),
                ),
                Op::Sqrt(x) => send(&mut grads, *x, g.zip_map(y, |gv, yv| gv * 0.5 / yv)),
                Op::DivScalar(x, sv) => {
                    let d = self.value(*sv).get(0, 0);
                    if self.rg(*sv) {
                        let dot: f64 = g
                            .data()
                            .iter()
                            .zip(self.value(*x).data())
                            .map(|(a, b)| a * b)
                            .sum();
                        send(&mut grads, *sv, Matrix::filled(1, 1, -dot / (d * d)));
                    }
                    send(&mut grads, *x, g.scale(1.0 / d));
                }
                Op::Clamp(x, lo, hi) => {
                    let d = g.zip_map(self.value(*x), |gv, xv| {
                        if xv >= *lo && xv <= *hi {
                            gv
                        } else {
                            0.0
                        }
                    });
                    send(&mut grads, *x, d);
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    send(&mut grads, *x, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::Mean(x) => {
                    let (r, c) = self.value(*x).shape();
                    let s = g.get(0, 0) / (r * c) as f64;
                    send(&mut grads, *x, Matrix::filled(r, c, s));
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let mut da = Matrix::zeros(g.rows(), ca);
                    let mut db = Matrix::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    send(&mut grads, *a, da);
                    send(&mut grads, *b, db);
                }
                Op::GatherRows(x, idx) => {
                    let (r, c) = self.value(*x).shape();
                    let mut d = Matrix::zeros(r, c);
                    for (k, &i) in idx.iter().enumerate() {
                        for (dv, gv) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                            *dv += gv;
                        }
                    }
                    send(&mut grads, *x, d);
                }
                Op::SelectCol(x, col) => {
                    let (r, c) = self.value(*x).shape();
                    let mut d = Matrix::zeros(r, c);
                    for k in 0..r {
                        d.set(k, *col, g.get(k, 0));
                    }
                    send(&mut grads, *x, d);
                }
                Op::SoftmaxRows(x) => {
                    let mut d = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..g.cols() {
                            d.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    send(&mut grads, *x, d);
                }
                Op::LogSoftmaxRows(x) => {
                    let mut d = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let gsum: f64 = g.row(r).iter().sum();
                        for c in 0..g.cols() {
                            d.set(r, c, g.get(r, c) - y.get(r, c).exp() * gsum);
                        }
                    }
                    send(&mut grads, *x, d);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (n, dcols) = g.shape();
                    let gam = self.value(*gamma);
                    let mut dgamma = Matrix::zeros(1, dcols);
                    let mut dbeta = Matrix::zeros(1, dcols);
                    for r in 0..n {
                        for c in 0..dcols {
                            dgamma.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                            dbeta.data_mut()[c] += g.get(r, c);
                        }
                    }
                    if self.rg(*x) {
                        let mut dx = Matrix::zeros(n, dcols);
                        for c in 0..dcols {
                            let gc = gam.get(0, c);
                            if *batch_stats {
                                let nf = n as f64;
                                let sum_dxhat = dbeta.get(0, c) * gc;
                                let sum_dxhat_xhat = dgamma.get(0, c) * gc;
                                for r in 0..n {
                                    let dxhat = g.get(r, c) * gc;
                                    dx.set(
                                        r,
                                        c,
                                        inv_std[c] / nf
                                            * (nf * dxhat
                                                - sum_dxhat
                                                - xhat.get(r, c) * sum_dxhat_xhat),
                                    );
                                }
                            } else {
                                for r in 0..n {
                                    dx.set(r, c, g.get(r, c) * gc * inv_std[c]);
                                }
                            }
                        }
                        send(&mut grads, *x, dx);
                    }
                    send(&mut grads, *gamma, dgamma);
                    send(&mut grads, *beta, dbeta);
                }
            }
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: HashMap<u64, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds this pass's gradient for `p` into `p.grad`. Returns whether the
    /// parameter took part in the pass.
    pub fn accumulate(&self, p: &mut ParamTensor) -> bool {
        match self.params.get(&p.id()).and_then(|v| self.get(*v)) {
            Some(g) => {
                p.grad.add_assign(g);
                true
            }
            None => false,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}
