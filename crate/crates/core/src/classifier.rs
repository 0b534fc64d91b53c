//! Two-layer GCN node classifier, its cross-entropy objective and metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FedniError, Result};
use crate::graphcons::PopulationGraph;
use crate::numerics::{
    Activation, Bind, GraphConv, Linear, Matrix, Module, Optimizer, ParamTensor, Tape, Var,
};

pub const HIDDEN: [usize; 2] = [64, 32];
pub const PROB_CLIP: f64 = 1e-7;

/// `G-conv(D, 64) + ELU → G-conv(64, 32) → FC(32, 2)`.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub gc1: GraphConv,
    pub gc2: GraphConv,
    pub fc: Linear,
}

/// Graph operands a classifier consumes, cached because they stay fixed
/// across every training epoch.
#[derive(Clone, Debug)]
pub struct GraphInput {
    pub a_norm: Matrix,
    /// `Â X`, the first propagation step.
    pub ax: Matrix,
}

impl GraphInput {
    pub fn new(g: &PopulationGraph) -> Self {
        let a_norm = g.normalized_adjacency();
        let ax = a_norm.matmul(&g.features);
        Self { a_norm, ax }
    }

    pub fn node_count(&self) -> usize {
        self.a_norm.rows()
    }
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, rng: &mut R) -> Self {
        let [h1, h2] = HIDDEN;
        Self {
            gc1: GraphConv::new(feature_dim, h1, Activation::Elu, rng),
            gc2: GraphConv::new(h1, h2, Activation::Identity, rng),
            fc: Linear::new(h2, 2, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.gc1.in_dim()
    }

    /// Logits per node.
    pub fn forward(&self, tape: &mut Tape, input: &GraphInput, bind: Bind) -> Var {
        let ax = tape.constant(input.ax.clone());
        let a = tape.constant(input.a_norm.clone());
        self.forward_vars(tape, ax, a, bind)
    }

    fn forward_vars(&self, tape: &mut Tape, ax: Var, a: Var, bind: Bind) -> Var {
        let w1 = match bind {
            Bind::Train => tape.param(&self.gc1.weight),
            Bind::Frozen => tape.frozen(&self.gc1.weight),
        };
        let h = tape.matmul(ax, w1);
        let h = self.gc1.activation.apply(tape, h);
        let h = self.gc2.forward(tape, h, a, bind);
        self.fc.forward(tape, h, bind)
    }

    /// Softmax probabilities, one row of two per node.
    pub fn predict(&self, input: &GraphInput) -> Result<Matrix> {
        if input.ax.cols() != self.feature_dim() {
            return Err(FedniError::Dimension(format!(
                "classifier expects {} features, graph has {}",
                self.feature_dim(),
                input.ax.cols()
            )));
        }
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, input, Bind::Frozen);
        let p = tape.softmax_rows(logits);
        Ok(tape.value(p).clone())
    }

    /// Positive-class probability per node.
    pub fn predict_positive(&self, input: &GraphInput) -> Result<Vec<f64>> {
        Ok(self.predict(input)?.column(1))
    }
}

impl Module for Classifier {
    fn state(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.gc1.push_state("clf.gc1", &mut out);
        self.gc2.push_state("clf.gc2", &mut out);
        self.fc.push_state("clf.fc", &mut out);
        out
    }

    fn state_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        self.gc1.push_state_mut("clf.gc1", &mut out);
        self.gc2.push_state_mut("clf.gc2", &mut out);
        self.fc.push_state_mut("clf.fc", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = Vec::new();
        self.gc1.push_params(&mut out);
        self.gc2.push_params(&mut out);
        self.fc.push_params(&mut out);
        out
    }
}

/// Summed binary cross-entropy of the positive-class probability over the
/// nodes selected by `mask`, with probabilities clipped to
/// `[1e-7, 1 − 1e-7]`.
pub fn ce_loss(tape: &mut Tape, logits: Var, labels: &[u8], mask: &[bool]) -> Result<Var> {
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(FedniError::NoLabels);
    }
    let probs = tape.softmax_rows(logits);
    let p = tape.select_col(probs, 1);
    let p = tape.gather_rows(p, &idx);
    let p = tape.clamp(p, PROB_CLIP, 1.0 - PROB_CLIP);
    let q = tape.affine(p, -1.0, 1.0);
    let lp = tape.log(p);
    let lq = tape.log(q);
    let y: Vec<f64> = idx.iter().map(|&i| labels[i] as f64).collect();
    let ny: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let y = tape.constant(Matrix::column_vector(&y));
    let ny = tape.constant(Matrix::column_vector(&ny));
    let a = tape.mul(lp, y);
    let b = tape.mul(lq, ny);
    let s = tape.add(a, b);
    let s = tape.sum(s);
    Ok(tape.scale(s, -1.0))
}

/// Runs `epochs` full-batch updates and returns the loss before each one.
pub fn train_epochs(
    clf: &mut Classifier,
    input: &GraphInput,
    labels: &[u8],
    train_mask: &[bool],
    epochs: usize,
    optimizer: &Optimizer,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        losses.push(train_step(clf, input, labels, train_mask, optimizer)?);
    }
    Ok(losses)
}

pub fn train_step(
    clf: &mut Classifier,
    input: &GraphInput,
    labels: &[u8],
    train_mask: &[bool],
    optimizer: &Optimizer,
) -> Result<f64> {
    clf.zero_grad();
    let mut tape = Tape::new();
    let logits = clf.forward(&mut tape, input, Bind::Train);
    let loss = ce_loss(&mut tape, logits, labels, train_mask)?;
    let grads = tape.backward(loss);
    let mut params = clf.params_mut();
    for p in params.iter_mut() {
        grads.accumulate(p);
    }
    optimizer.step(&mut params);
    Ok(tape.scalar(loss))
}

/// Loss of the current weights without updating them.
pub fn evaluate_loss(
    clf: &Classifier,
    input: &GraphInput,
    labels: &[u8],
    mask: &[bool],
) -> Result<f64> {
    let mut tape = Tape::new();
    let logits = clf.forward(&mut tape, input, Bind::Frozen);
    let loss = ce_loss(&mut tape, logits, labels, mask)?;
    Ok(tape.scalar(loss))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Absent when the evaluated nodes hold a single class.
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub count: usize,
}

/// Threshold metrics at 0.5 (a probability of exactly 0.5 predicts class 0)
/// and the tie-corrected rank AUC.
pub fn evaluate_metrics(
    positive_prob: &[f64],
    labels: &[u8],
    mask: &[bool],
) -> Result<MetricsReport> {
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(FedniError::Parameter("empty evaluation set".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for &i in &idx {
        match (positive_prob[i] > 0.5, labels[i] == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let scores: Vec<f64> = idx.iter().map(|&i| positive_prob[i]).collect();
    let ys: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
    Ok(MetricsReport {
        accuracy: ratio(tp + tn, idx.len()),
        auc: auc(&scores, &ys),
        precision,
        recall,
        f1,
        count: idx.len(),
    })
}

/// Mann–Whitney AUC with midranks for ties; `None` without both classes.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;
    Some(u / (n1 * n0) as f64)
}
