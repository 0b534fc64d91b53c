//! Synchronous FedAvg rounds for inpainting (phase one) and classification
//! (phase two).

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate_loss, train_step, Classifier, GraphInput};
use crate::error::{FedniError, Result};
use crate::graphcons::PopulationGraph;
use crate::inpaint::{local_inpaint_train_step, Discriminator, Generator, InpaintConfig};
use crate::numerics::Optimizer;

use super::transport::{Payload, Phase, Transport, TransportMode, Upload};
use super::weights::{dp_perturb, fedavg_aggregate, WeightVector};

pub const DEFAULT_SIGMA_DP: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub sigma_dp: f64,
    pub transport: TransportMode,
}

/// Which inpainting networks are federated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InpaintFl {
    /// Generator averaged, discriminator local.
    FlG,
    /// Discriminator averaged, generator local.
    FlD,
    FlDG,
    /// Nothing leaves the client.
    NoflDG,
}

impl InpaintFl {
    pub fn shares_generator(self) -> bool {
        matches!(self, InpaintFl::FlG | InpaintFl::FlDG)
    }

    pub fn shares_discriminator(self) -> bool {
        matches!(self, InpaintFl::FlD | InpaintFl::FlDG)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Mean local objective per participating client.
    pub client_losses: Vec<f64>,
    /// Loss of the freshly aggregated model, summed over clients.
    pub server_loss: Option<f64>,
    #[serde(skip)]
    pub wall_ms: f64,
}

/// One silo's inpainting state.
#[derive(Clone, Debug)]
pub struct InpaintClient {
    pub graph: PopulationGraph,
    pub gen: Generator,
    pub disc: Discriminator,
    pub rng: ChaCha8Rng,
    pub dp_rng: ChaCha8Rng,
    pub steps: usize,
}

impl InpaintClient {
    /// `E` local steps; returns the mean step objective.
    pub fn train_local(&mut self, epochs: usize, cfg: &InpaintConfig) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..epochs {
            let r = local_inpaint_train_step(
                &self.graph,
                &mut self.gen,
                Some(&mut self.disc),
                cfg,
                self.steps,
                &mut self.rng,
            )?;
            self.steps += 1;
            total += r.total;
        }
        Ok(total / epochs.max(1) as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub logs: Vec<RoundLog>,
    /// Clients left out, with the reason.
    pub excluded: Vec<(usize, String)>,
}

fn send_weights(
    transport: &mut Transport,
    from: usize,
    round: usize,
    phase: Phase,
    w: &WeightVector,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    transport.send(Upload {
        from,
        round,
        phase,
        payload: Payload::Weights(dp_perturb(w, sigma, rng)?),
    })
}

fn send_loss(
    transport: &mut Transport,
    from: usize,
    round: usize,
    phase: Phase,
    label: &str,
    value: f64,
) -> Result<()> {
    transport.send(Upload {
        from,
        round,
        phase,
        payload: Payload::Loss {
            label: label.to_string(),
            value,
        },
    })
}

/// Weight uploads whose tensors all carry `prefix`.
fn weights_with_prefix(inbox: &[Upload], prefix: &str) -> Vec<WeightVector> {
    inbox
        .iter()
        .filter_map(|u| match &u.payload {
            Payload::Weights(w) if w.names().all(|n| n.starts_with(prefix)) => Some(w.clone()),
            _ => None,
        })
        .collect()
}

fn losses_labeled(inbox: &[Upload], label: &str) -> Vec<f64> {
    inbox
        .iter()
        .filter_map(|u| match &u.payload {
            Payload::Loss { label: l, value } if l == label => Some(*value),
            _ => None,
        })
        .collect()
}

/// Federated inpainting. Clients starting from identical generators stay
/// synchronized after every broadcast when the generator is shared.
pub fn run_phase1(
    clients: &mut [InpaintClient],
    fed: &FedConfig,
    cfg: &InpaintConfig,
    fl: InpaintFl,
    transport: &mut Transport,
) -> Result<PhaseReport> {
    run_phase1_observed(clients, fed, cfg, fl, transport, None)
}

/// Callback run after every aggregation, once clients hold the new global
/// weights.
pub type RoundHook<'a> = &'a mut dyn FnMut(usize, &mut [InpaintClient]) -> Result<()>;

/// [`run_phase1`] with an optional per-round hook. The hook sees the same
/// weights the next round starts from, so training is unchanged by it.
pub fn run_phase1_observed(
    clients: &mut [InpaintClient],
    fed: &FedConfig,
    cfg: &InpaintConfig,
    fl: InpaintFl,
    transport: &mut Transport,
    mut hook: Option<RoundHook>,
) -> Result<PhaseReport> {
    if fed.rounds == 0 || fed.local_epochs == 0 {
        return Err(FedniError::Parameter(
            "rounds and local epochs must be at least 1".into(),
        ));
    }
    let mut report = PhaseReport::default();
    let active: Vec<usize> = (0..clients.len())
        .filter(|&m| {
            let ok = clients[m].graph.node_count() > 0;
            if !ok {
                report.excluded.push((m, "empty graph".into()));
            }
            ok
        })
        .collect();
    let Some(&lead) = active.first() else {
        return Err(FedniError::Parameter("no client holds any nodes".into()));
    };
    let mut global_gen = WeightVector::pack(&clients[lead].gen);
    let mut global_disc = WeightVector::pack(&clients[lead].disc);

    for round in 0..fed.rounds {
        let start = Instant::now();
        for &m in &active {
            let c = &mut clients[m];
            if fl.shares_generator() {
                global_gen.unpack_into(&mut c.gen)?;
            }
            if fl.shares_discriminator() {
                global_disc.unpack_into(&mut c.disc)?;
            }
            let loss = c.train_local(fed.local_epochs, cfg)?;
            if fl.shares_generator() {
                send_weights(
                    transport,
                    m,
                    round,
                    Phase::Inpaint,
                    &WeightVector::pack(&c.gen),
                    fed.sigma_dp,
                    &mut c.dp_rng,
                )?;
            }
            if fl.shares_discriminator() {
                send_weights(
                    transport,
                    m,
                    round,
                    Phase::Inpaint,
                    &WeightVector::pack(&c.disc),
                    fed.sigma_dp,
                    &mut c.dp_rng,
                )?;
            }
            send_loss(transport, m, round, Phase::Inpaint, "inpaint_loss", loss)?;
        }
        let inbox = transport.drain();
        if fl.shares_generator() {
            global_gen = fedavg_aggregate(&weights_with_prefix(&inbox, "gen."))?;
        }
        if fl.shares_discriminator() {
            global_disc = fedavg_aggregate(&weights_with_prefix(&inbox, "disc."))?;
        }
        report.logs.push(RoundLog {
            round,
            client_losses: losses_labeled(&inbox, "inpaint_loss"),
            server_loss: None,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if let Some(h) = hook.as_mut() {
            broadcast(clients, &active, fl, &global_gen, &global_disc)?;
            h(round, clients)?;
        }
    }
    broadcast(clients, &active, fl, &global_gen, &global_disc)?;
    Ok(report)
}

fn broadcast(
    clients: &mut [InpaintClient],
    active: &[usize],
    fl: InpaintFl,
    gen: &WeightVector,
    disc: &WeightVector,
) -> Result<()> {
    for &m in active {
        if fl.shares_generator() {
            gen.unpack_into(&mut clients[m].gen)?;
        }
        if fl.shares_discriminator() {
            disc.unpack_into(&mut clients[m].disc)?;
        }
    }
    Ok(())
}

/// One silo's classification state.
#[derive(Clone, Debug)]
pub struct ClassifierClient {
    pub input: GraphInput,
    pub labels: Vec<u8>,
    pub train_mask: Vec<bool>,
    pub clf: Classifier,
    pub dp_rng: ChaCha8Rng,
}

/// Federated classifier training; the server loss of each round is the
/// summed training loss of the aggregated model across clients.
pub fn run_phase2(
    clients: &mut [ClassifierClient],
    fed: &FedConfig,
    optimizer: &Optimizer,
    transport: &mut Transport,
) -> Result<PhaseReport> {
    if fed.rounds == 0 || fed.local_epochs == 0 {
        return Err(FedniError::Parameter(
            "rounds and local epochs must be at least 1".into(),
        ));
    }
    let mut report = PhaseReport::default();
    let active: Vec<usize> = (0..clients.len())
        .filter(|&m| {
            let c = &clients[m];
            let reason = if c.input.node_count() == 0 {
                Some("empty graph")
            } else if !c.train_mask.iter().any(|&b| b) {
                Some("no labeled training nodes")
            } else {
                None
            };
            if let Some(r) = reason {
                report.excluded.push((m, r.into()));
            }
            reason.is_none()
        })
        .collect();
    let Some(&lead) = active.first() else {
        return Err(FedniError::NoLabels);
    };
    let mut global = WeightVector::pack(&clients[lead].clf);

    for round in 0..fed.rounds {
        let start = Instant::now();
        for &m in &active {
            let c = &mut clients[m];
            global.unpack_into(&mut c.clf)?;
            let mut total = 0.0;
            for _ in 0..fed.local_epochs {
                total += train_step(&mut c.clf, &c.input, &c.labels, &c.train_mask, optimizer)?;
            }
            send_weights(
                transport,
                m,
                round,
                Phase::Classify,
                &WeightVector::pack(&c.clf),
                fed.sigma_dp,
                &mut c.dp_rng,
            )?;
            send_loss(
                transport,
                m,
                round,
                Phase::Classify,
                "train_loss",
                total / fed.local_epochs as f64,
            )?;
        }
        let inbox = transport.drain();
        global = fedavg_aggregate(&weights_with_prefix(&inbox, "clf."))?;
        let client_losses = losses_labeled(&inbox, "train_loss");

        for &m in &active {
            let c = &mut clients[m];
            global.unpack_into(&mut c.clf)?;
            let l = evaluate_loss(&c.clf, &c.input, &c.labels, &c.train_mask)?;
            send_loss(transport, m, round, Phase::Classify, "global_loss", l)?;
        }
        let server_loss = losses_labeled(&transport.drain(), "global_loss")
            .iter()
            .sum();
        report.logs.push(RoundLog {
            round,
            client_losses,
            server_loss: Some(server_loss),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(report)
}
