//! Inpainting objectives and one local adversarial training step.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graphcons::{normalize_adjacency, PhenoColumn};
use crate::masking::{sample_episode, MaskConfig, MaskEpisode};
use crate::numerics::{Adam, Bind, Matrix, Module, Tape, Var};

use super::models::{Discriminator, Generator, PhenoScaler, NOISE_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintConfig {
    /// Weight of the reconstruction term.
    pub alpha: f64,
    /// Weight of the adversarial term.
    pub beta: f64,
    pub optimizer: Adam,
    pub mask: MaskConfig,
    pub use_discriminator: bool,
    /// Discriminator update every this many generator steps; 0 disables it.
    pub disc_interval: usize,
    /// Power iterations per discriminator training forward.
    pub power_iters: usize,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            optimizer: Adam::new(1e-3),
            mask: MaskConfig::default(),
            use_discriminator: true,
            disc_interval: 1,
            power_iters: 1,
        }
    }
}

/// Generator-side loss nodes of one episode.
pub struct GeneratorLosses {
    pub num: Var,
    pub rec: Option<Var>,
    pub gen: Option<Var>,
    pub pheno: Option<Var>,
    pub fea: Option<Var>,
    /// `L_num + L_fea + L_pheno`.
    pub total: Var,
    /// Generated features, one row per slot.
    pub generated: Option<Matrix>,
    /// Ground-truth rows matched to each slot.
    pub aligned: Option<Matrix>,
    pub bn_fallback: bool,
}

/// Parent (corrupted-graph index) of every teacher-forced slot: one per
/// hidden neighbour, grouped by parent.
pub fn slot_parents(ep: &MaskEpisode) -> Vec<usize> {
    ep.hidden
        .iter()
        .enumerate()
        .flat_map(|(i, h)| std::iter::repeat_n(i, h.len()))
        .collect()
}

/// Pairs generated rows with target rows by repeatedly taking the closest
/// remaining pair. Returns, for each generated row, its target row.
pub fn greedy_match(generated: &Matrix, targets: &Matrix) -> Vec<usize> {
    let n = generated.rows();
    assert_eq!(n, targets.rows());
    let mut pairs = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let d: f64 = generated
                .row(a)
                .iter()
                .zip(targets.row(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            pairs.push((d, a, b));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut out = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (_, a, b) in pairs {
        if out[a] == usize::MAX && !used[b] {
            out[a] = b;
            used[b] = true;
        }
    }
    out
}

/// `mean(log σ(d)) − 1`, i.e. `−E[1 − log σ(d(x̃))]`.
pub fn adversarial_generator_loss(tape: &mut Tape, scores: Var) -> Var {
    let ls = tape.log_sigmoid(scores);
    let m = tape.mean(ls);
    tape.affine(m, 1.0, -1.0)
}

/// `−E_real[1 − log σ(d(x))] − E_fake[log σ(d(x̃))]`; both batches enter as
/// constants so only the discriminator is differentiated.
pub fn discriminator_loss(
    tape: &mut Tape,
    disc: &mut Discriminator,
    real: &Matrix,
    fake: &Matrix,
    power_iters: usize,
) -> Var {
    assert!(
        real.rows() > 0 && fake.rows() > 0,
        "discriminator needs both batches"
    );
    let r = real.rows();
    let batch = tape.constant(real.vstack(fake));
    let scores = disc.forward(tape, batch, Bind::Train, power_iters);
    let ls = tape.log_sigmoid(scores);
    let real_idx: Vec<usize> = (0..r).collect();
    let fake_idx: Vec<usize> = (r..r + fake.rows()).collect();
    let lr = tape.gather_rows(ls, &real_idx);
    let lf = tape.gather_rows(ls, &fake_idx);
    let mr = tape.mean(lr);
    let mf = tape.mean(lf);
    let real_term = tape.affine(mr, 1.0, -1.0);
    tape.sub(real_term, mf)
}

/// Builds every generator-side loss for `ep` with explicit slot noise.
///
/// `disc` contributes the adversarial term with its weights frozen and its
/// power-iteration state untouched.
#[allow(clippy::too_many_arguments)]
pub fn generator_losses(
    tape: &mut Tape,
    gen: &mut Generator,
    disc: Option<&mut Discriminator>,
    ep: &MaskEpisode,
    noise: &Matrix,
    scaler: &PhenoScaler,
    alpha: f64,
    beta: f64,
) -> GeneratorLosses {
    let x = tape.constant(ep.corrupted.features.clone());
    let a = tape.constant(normalize_adjacency(&ep.corrupted.adjacency));
    let z = gen.encode(tape, x, a, Bind::Train);
    let count = gen.count_head(tape, z, Bind::Train);
    let target = tape.constant(Matrix::column_vector(&ep.masked_count));
    let diff = tape.sub(count, target);
    let sq = tape.square(diff);
    let num = tape.sum(sq);

    let parents = slot_parents(ep);
    if parents.is_empty() {
        return GeneratorLosses {
            num,
            rec: None,
            gen: None,
            pheno: None,
            fea: None,
            total: num,
            generated: None,
            aligned: None,
            bn_fallback: false,
        };
    }
    assert_eq!(
        noise.shape(),
        (parents.len(), NOISE_DIM),
        "one noise row per slot"
    );

    let zr = tape.gather_rows(z, &parents);
    let nz = tape.constant(noise.clone());
    let (xt, bn_fallback) = gen.feature_head(tape, zr, nz, true, Bind::Train);

    // Align each parent's slots with its hidden neighbours.
    let generated = tape.value(xt).clone();
    let mut order = Vec::with_capacity(parents.len());
    let mut start = 0;
    for h in &ep.hidden {
        if h.is_empty() {
            continue;
        }
        let slots: Vec<usize> = (start..start + h.len()).collect();
        let m = greedy_match(
            &generated.select_rows(&slots),
            &ep.masked_features.select_rows(h),
        );
        order.extend(m.into_iter().map(|t| h[t]));
        start += h.len();
    }
    let aligned = ep.masked_features.select_rows(&order);
    let tgt = tape.constant(aligned.clone());
    let d = tape.sub(xt, tgt);
    let sq = tape.square(d);
    let rec = tape.sum(sq);

    let heads = gen.pheno_head(tape, xt, Bind::Train);
    let mut pheno = None;
    for (q, (head, col)) in heads
        .into_iter()
        .zip(ep.masked_phenotypes.columns())
        .enumerate()
    {
        let term = match col {
            PhenoColumn::Categorical(v) => {
                let levels = tape.value(head).cols();
                let mut onehot = Matrix::zeros(order.len(), levels);
                for (r, &k) in order.iter().enumerate() {
                    onehot.set(r, v[k] as usize, 1.0);
                }
                let ls = tape.log_softmax_rows(head);
                let oh = tape.constant(onehot);
                let picked = tape.mul(ls, oh);
                let s = tape.sum(picked);
                tape.scale(s, -1.0)
            }
            PhenoColumn::Continuous(v) => {
                let t: Vec<f64> = order.iter().map(|&k| scaler.standardize(q, v[k])).collect();
                let t = tape.constant(Matrix::column_vector(&t));
                let d = tape.sub(head, t);
                let sq = tape.square(d);
                tape.sum(sq)
            }
        };
        pheno = Some(match pheno {
            None => term,
            Some(p) => tape.add(p, term),
        });
    }

    let adv = match disc {
        Some(disc) if beta != 0.0 => {
            let scores = disc.forward(tape, xt, Bind::Frozen, 0);
            Some(adversarial_generator_loss(tape, scores))
        }
        _ => None,
    };
    let mut fea = tape.scale(rec, alpha);
    if let Some(l) = adv {
        let w = tape.scale(l, beta);
        fea = tape.add(fea, w);
    }
    let mut total = tape.add(num, fea);
    if let Some(p) = pheno {
        total = tape.add(total, p);
    }
    GeneratorLosses {
        num,
        rec: Some(rec),
        gen: adv,
        pheno,
        fea: Some(fea),
        total,
        generated: Some(generated),
        aligned: Some(aligned),
        bn_fallback,
    }
}

/// Scalars from one local step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub num: f64,
    pub rec: f64,
    pub gen: Option<f64>,
    pub pheno: f64,
    pub fea: f64,
    pub dis: Option<f64>,
    pub total: f64,
    pub slots: usize,
    /// No node of the episode had a hidden neighbour.
    pub empty_episode: bool,
}

pub fn sample_noise<R: Rng + ?Sized>(rows: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * NOISE_DIM)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Matrix::from_vec(rows, NOISE_DIM, data).expect("noise shape")
}

/// Samples an episode, takes one generator step and (on schedule) one
/// discriminator step.
pub fn local_inpaint_train_step<R: Rng + ?Sized>(
    g: &crate::graphcons::PopulationGraph,
    gen: &mut Generator,
    mut disc: Option<&mut Discriminator>,
    cfg: &InpaintConfig,
    step: usize,
    rng: &mut R,
) -> Result<StepReport> {
    let ep = sample_episode(g, &cfg.mask, rng)?;
    let scaler = PhenoScaler::fit(&g.phenotypes);
    let noise = sample_noise(ep.hidden_total(), rng);
    let use_disc = cfg.use_discriminator && disc.is_some();

    gen.zero_grad();
    let mut tape = Tape::new();
    let adv_disc = if use_disc { disc.as_deref_mut() } else { None };
    let losses = generator_losses(
        &mut tape, gen, adv_disc, &ep, &noise, &scaler, cfg.alpha, cfg.beta,
    );
    let grads = tape.backward(losses.total);
    let mut params = gen.params_mut();
    for p in params.iter_mut() {
        grads.accumulate(p);
    }
    cfg.optimizer.step(&mut params);

    let read = |v: Option<Var>| v.map(|v| tape.scalar(v));
    let mut report = StepReport {
        num: tape.scalar(losses.num),
        rec: read(losses.rec).unwrap_or(0.0),
        gen: read(losses.gen),
        pheno: read(losses.pheno).unwrap_or(0.0),
        fea: read(losses.fea).unwrap_or(0.0),
        dis: None,
        total: tape.scalar(losses.total),
        slots: ep.hidden_total(),
        empty_episode: losses.generated.is_none(),
    };

    let due = cfg.disc_interval > 0 && step % cfg.disc_interval == 0;
    if let (true, true, Some(disc), Some(fake)) = (use_disc, due, disc, losses.generated) {
        if ep.masked_features.rows() > 0 {
            disc.zero_grad();
            let mut tape = Tape::new();
            let l =
                discriminator_loss(&mut tape, disc, &ep.masked_features, &fake, cfg.power_iters);
            let grads = tape.backward(l);
            let mut params = disc.params_mut();
            for p in params.iter_mut() {
                grads.accumulate(p);
            }
            cfg.optimizer.step(&mut params);
            report.dis = Some(tape.scalar(l));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_prefers_closest_pairs() {
        let g = Matrix::from_rows(&[vec![0.0], vec![10.0]]);
        let t = Matrix::from_rows(&[vec![9.0], vec![1.0]]);
        assert_eq!(greedy_match(&g, &t), vec![1, 0]);
    }

    #[test]
    fn literal_adversarial_values_at_half() {
        let mut tape = Tape::new();
        let s = tape.constant(Matrix::zeros(3, 1));
        let l = adversarial_generator_loss(&mut tape, s);
        assert!((tape.scalar(l) - (0.5f64.ln() - 1.0)).abs() < 1e-12);
    }
}
