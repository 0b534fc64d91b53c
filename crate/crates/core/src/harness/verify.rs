//! Fast self-checks behind `fedni verify`: gradients against central
//! differences, spectral normalization against an SVD, masking
//! connectivity, the upload protocol and the DP noise scale.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{ce_loss, train_step, Classifier, GraphInput};
use crate::datagen::{generate_population, partition_clients, CohortSpec, PartitionMode};
use crate::error::Result;
use crate::federation::{
    dp_perturb, run_phase1, run_phase2, AuditPolicy, ClassifierClient, FedConfig, InpaintClient,
    InpaintFl, LayerEntry, Transport, TransportMode, WeightVector,
};
use crate::graphcons::PopulationGraph;
use crate::inpaint::{
    discriminator_loss, generator_losses, sample_noise, Discriminator, Generator, InpaintConfig,
    PhenoScaler,
};
use crate::masking::{is_connected, mask_leaves, sample_episode, MaskConfig};
use crate::numerics::{spectral_normalize, Bind, Matrix, Module, Tape, Var};

use super::seeds::rng;

pub const GRAD_REL_TOL: f64 = 1e-4;
/// Absolute floor so that near-zero gradients do not demand relative
/// agreement below the difference quotient's rounding noise.
pub const GRAD_ABS_FLOOR: f64 = 1e-8;
/// Difference steps, largest first. A quotient is kept once the next finer
/// one agrees with it, which steps around ReLU kinks.
const FD_STEPS: [f64; 4] = [1e-5, 1e-6, 1e-7, 1e-8];

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Compares tape gradients with central differences on up to `probes`
/// entries of each parameter tensor. Returns the worst ratio
/// `|analytic − numeric| / (tol · max(|a|, |n|) + floor)`; below 1 passes.
pub fn gradient_check<M: Module>(
    model: &mut M,
    loss: &mut dyn FnMut(&mut M, &mut Tape) -> Var,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    model.zero_grad();
    let mut tape = Tape::new();
    let l = loss(model, &mut tape);
    let grads = tape.backward(l);
    let analytic: Vec<Matrix> = model
        .params_mut()
        .into_iter()
        .map(|p| {
            grads.accumulate(p);
            p.grad.clone()
        })
        .collect();
    let mut eval = |model: &mut M| {
        let mut tape = Tape::new();
        let l = loss(model, &mut tape);
        tape.scalar(l)
    };
    let mut worst: f64 = 0.0;
    for (t, a) in analytic.iter().enumerate() {
        let picks: Vec<usize> = if a.len() <= probes {
            (0..a.len()).collect()
        } else {
            (0..probes).map(|_| rng.random_range(0..a.len())).collect()
        };
        for i in picks {
            let orig = model.params_mut()[t].value.data()[i];
            let mut central = |m: &mut M, h: f64| {
                m.params_mut()[t].value.data_mut()[i] = orig + h;
                let up = eval(m);
                m.params_mut()[t].value.data_mut()[i] = orig - h;
                let down = eval(m);
                (up - down) / (2.0 * h)
            };
            let mut numeric = central(model, FD_STEPS[0]);
            for &h in &FD_STEPS[1..] {
                let finer = central(model, h);
                if (numeric - finer).abs()
                    <= GRAD_REL_TOL * numeric.abs().max(finer.abs()) + GRAD_ABS_FLOOR
                {
                    break;
                }
                numeric = finer;
            }
            model.params_mut()[t].value.data_mut()[i] = orig;
            let an = a.data()[i];
            let ratio = (an - numeric).abs()
                / (GRAD_REL_TOL * an.abs().max(numeric.abs()) + GRAD_ABS_FLOOR);
            worst = worst.max(ratio);
        }
    }
    worst
}

fn small_cohort(n: usize, seed: u64) -> Result<PopulationGraph> {
    let spec = CohortSpec {
        n,
        d: 8,
        seed,
        ..Default::default()
    };
    generate_population(&spec)
}

fn check_gradients() -> Result<Check> {
    let g = small_cohort(24, 1)?;
    let mut r = rng(1, &[]);
    let input = GraphInput::new(&g);
    let mask = g.labeled.clone();
    let mut clf = Classifier::new(g.feature_dim(), &mut r);
    let c = gradient_check(
        &mut clf,
        &mut |m, t| {
            let logits = m.forward(t, &input, Bind::Train);
            ce_loss(t, logits, &g.labels, &mask).expect("labeled nodes")
        },
        usize::MAX,
        &mut r,
    );

    let cfg = MaskConfig::default();
    let ep = sample_episode(&g, &cfg, &mut r)?;
    let noise = sample_noise(ep.hidden_total(), &mut r);
    let scaler = PhenoScaler::fit(&g.phenotypes);
    let mut gen = Generator::new(g.feature_dim(), g.phenotypes.fields(), &mut r);
    let mut disc = Discriminator::new(g.feature_dim(), &mut r);
    let gq = gradient_check(
        &mut gen,
        &mut |m, t| generator_losses(t, m, Some(&mut disc), &ep, &noise, &scaler, 1.0, 1.0).total,
        12,
        &mut r,
    );

    let fake = Matrix::from_vec(
        3,
        g.feature_dim(),
        (0..3 * g.feature_dim())
            .map(|_| r.random_range(-1.0..1.0))
            .collect(),
    )?;
    let real = g.features.select_rows(&[0, 1, 2, 3]);
    let mut d2 = Discriminator::new(g.feature_dim(), &mut r);
    let dq = gradient_check(
        &mut d2,
        &mut |m, t| discriminator_loss(t, m, &real, &fake, 0),
        usize::MAX,
        &mut r,
    );
    let worst = c.max(gq).max(dq);
    Ok(Check {
        name: "gradients",
        passed: worst < 1.0,
        detail: format!(
            "worst error/tolerance: classifier {c:.3}, generator {gq:.3}, discriminator {dq:.3}"
        ),
    })
}

/// Power iterations for the offline spectral check. Freshly initialized
/// weights have nearly tied top singular values, so short runs converge
/// slowly.
pub const CHECK_POWER_ITERS: usize = 500;

fn check_spectral() -> Check {
    let mut r = rng(2, &[]);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in 0..17 {
        let disc = Discriminator::new(8 + 4 * i, &mut r);
        for layer in &disc.layers {
            let w = &layer.linear.weight.value;
            let mut u: Vec<f64> = (0..w.cols()).map(|_| r.random_range(-1.0..1.0)).collect();
            let sn = spectral_normalize(w, &mut u, CHECK_POWER_ITERS);
            let top = DMatrix::from_row_slice(w.rows(), w.cols(), sn.normalized.data())
                .singular_values()
                .max();
            worst = worst.max((top - 1.0).abs());
            count += 1;
        }
    }
    Check {
        name: "spectral-norm",
        passed: worst <= 1e-3,
        detail: format!("max |σ_max − 1| over {count} discriminator weights: {worst:.2e}"),
    }
}

fn check_masking() -> Result<Check> {
    let mut r = rng(3, &[]);
    let mut connected = 0;
    let mut worst_fraction: f64 = 0.0;
    for i in 0..30 {
        let g = small_cohort(50, 100 + i)?;
        let root = r.random_range(0..g.node_count());
        let ep = mask_leaves(&g, root, 0.125, 5, &mut r)?;
        connected += usize::from(is_connected(&ep.corrupted.adjacency));
        worst_fraction = worst_fraction.max((ep.achieved_fraction - 0.125).abs());
    }
    Ok(Check {
        name: "leaf-masking",
        passed: connected == 30 && worst_fraction <= 0.025,
        detail: format!("{connected}/30 connected, largest fraction miss {worst_fraction:.3}"),
    })
}

fn check_protocol() -> Result<Check> {
    let data = small_cohort(60, 4)?;
    let parts = partition_clients(
        &data,
        2,
        4,
        PartitionMode::Rebuild,
        &Default::default(),
        0.0,
    )?;
    let mut r = rng(4, &[]);
    let gen = Generator::new(data.feature_dim(), data.phenotypes.fields(), &mut r);
    let disc = Discriminator::new(data.feature_dim(), &mut r);
    let mut clients: Vec<InpaintClient> = parts
        .iter()
        .enumerate()
        .map(|(m, g)| InpaintClient {
            graph: g.clone(),
            gen: gen.clone(),
            disc: disc.clone(),
            rng: rng(4, &[m as u64]),
            dp_rng: rng(5, &[m as u64]),
            steps: 0,
        })
        .collect();
    let mut transport = Transport::new(TransportMode::Serialized);
    for g in &parts {
        transport.register_canaries(&g.features);
    }
    let fed = FedConfig {
        rounds: 2,
        local_epochs: 1,
        sigma_dp: 0.01,
        transport: TransportMode::Serialized,
    };
    run_phase1(
        &mut clients,
        &fed,
        &InpaintConfig::default(),
        InpaintFl::FlG,
        &mut transport,
    )?;
    let audit = transport.audit(&AuditPolicy::generator_only());

    // Two identical noiseless clients must reproduce one client exactly.
    let g = &parts[0];
    let clf = Classifier::new(g.feature_dim(), &mut r);
    let client = ClassifierClient {
        input: GraphInput::new(g),
        labels: g.labels.clone(),
        train_mask: g.labeled.clone(),
        clf: clf.clone(),
        dp_rng: rng(6, &[]),
    };
    let fed = FedConfig {
        rounds: 2,
        local_epochs: 2,
        sigma_dp: 0.0,
        transport: TransportMode::InProcess,
    };
    let opt = crate::numerics::Optimizer::Adam(crate::numerics::Adam::new(1e-3));
    let mut pair = vec![client.clone(), client.clone()];
    run_phase2(
        &mut pair,
        &fed,
        &opt,
        &mut Transport::new(TransportMode::InProcess),
    )?;
    let mut solo = client;
    for _ in 0..fed.rounds * fed.local_epochs {
        train_step(
            &mut solo.clf,
            &solo.input,
            &solo.labels,
            &solo.train_mask,
            &opt,
        )?;
    }
    let same = WeightVector::pack(&pair[0].clf) == WeightVector::pack(&solo.clf);
    Ok(Check {
        name: "protocol",
        passed: audit.is_clean() && audit.weight_messages == 4 && same,
        detail: format!(
            "{} messages, {} violations, identical-client average equals solo training: {same}",
            audit.messages,
            audit.violations.len()
        ),
    })
}

fn check_dp() -> Result<Check> {
    let n = 100_000;
    let w = WeightVector {
        manifest: vec![LayerEntry {
            name: "clf.probe".into(),
            dims: vec![n],
        }],
        values: vec![0.0; n],
    };
    let noisy = dp_perturb(&w, 0.01, &mut rng(7, &[]))?;
    let mean = noisy.values.iter().sum::<f64>() / n as f64;
    let std =
        (noisy.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    Ok(Check {
        name: "dp-noise",
        passed: (std / 0.01 - 1.0).abs() <= 0.03,
        detail: format!("sample std {std:.5} over {n} elements"),
    })
}

/// Runs every check; an error inside a check counts as a failure.
pub fn run_checks() -> Vec<Check> {
    let wrap = |name: &'static str, r: Result<Check>| {
        r.unwrap_or_else(|e| Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        })
    };
    vec![
        wrap("gradients", check_gradients()),
        check_spectral(),
        wrap("leaf-masking", check_masking()),
        wrap("protocol", check_protocol()),
        wrap("dp-noise", check_dp()),
    ]
}
