//! Both federated phases on five silos with serialized uploads and the
//! transport audit.

use fedni::classifier::{Classifier, GraphInput};
use fedni::datagen::{generate_population, partition_clients, CohortSpec, PartitionMode};
use fedni::federation::{
    run_phase1, run_phase2, AuditPolicy, ClassifierClient, FedConfig, InpaintClient, InpaintFl,
    Transport, TransportMode,
};
use fedni::inpaint::{Discriminator, Generator, InpaintConfig};
use fedni::numerics::{Adam, Optimizer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fedni::Result<()> {
    let data = generate_population(&CohortSpec {
        n: 250,
        d: 20,
        ..Default::default()
    })?;
    let silos = partition_clients(
        &data,
        5,
        7,
        PartitionMode::Rebuild,
        &Default::default(),
        0.0,
    )?;
    let seeded = ChaCha8Rng::seed_from_u64;
    let mut rng = seeded(7);
    let gen = Generator::new(data.feature_dim(), data.phenotypes.fields(), &mut rng);
    let disc = Discriminator::new(data.feature_dim(), &mut rng);

    let mut transport = Transport::new(TransportMode::Serialized);
    let mut clients: Vec<InpaintClient> = silos
        .iter()
        .enumerate()
        .map(|(m, g)| {
            transport.register_canaries(&g.features);
            InpaintClient {
                graph: g.clone(),
                gen: gen.clone(),
                disc: disc.clone(),
                rng: seeded(100 + m as u64),
                dp_rng: seeded(200 + m as u64),
                steps: 0,
            }
        })
        .collect();
    let fed = FedConfig {
        rounds: 5,
        local_epochs: 5,
        sigma_dp: 0.01,
        transport: TransportMode::Serialized,
    };
    let p1 = run_phase1(
        &mut clients,
        &fed,
        &InpaintConfig::default(),
        InpaintFl::FlG,
        &mut transport,
    )?;
    for log in &p1.logs {
        let mean = log.client_losses.iter().sum::<f64>() / log.client_losses.len() as f64;
        println!("inpaint round {}: mean client loss {mean:.3}", log.round);
    }

    let clf = Classifier::new(data.feature_dim(), &mut rng);
    let mut clients: Vec<ClassifierClient> = silos
        .iter()
        .enumerate()
        .map(|(m, g)| ClassifierClient {
            input: GraphInput::new(g),
            labels: g.labels.clone(),
            train_mask: g.labeled.clone(),
            clf: clf.clone(),
            dp_rng: seeded(300 + m as u64),
        })
        .collect();
    let fed = FedConfig { rounds: 10, ..fed };
    let p2 = run_phase2(
        &mut clients,
        &fed,
        &Optimizer::Adam(Adam::new(1e-3)),
        &mut transport,
    )?;
    for log in &p2.logs {
        println!(
            "classify round {}: server loss {:.3}",
            log.round,
            log.server_loss.unwrap_or(f64::NAN)
        );
    }

    let audit = transport.audit(&AuditPolicy::generator_only());
    println!(
        "{} messages ({} with weights), {} violations",
        audit.messages,
        audit.weight_messages,
        audit.violations.len()
    );
    Ok(())
}
