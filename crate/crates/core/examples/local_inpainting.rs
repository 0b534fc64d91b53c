//! Trains a generator on one silo, then grafts predicted neighbours in.

use fedni::datagen::{generate_population, CohortSpec};
use fedni::inpaint::{
    graph_merge, local_inpaint_train_step, Discriminator, Generator, InpaintConfig, MergeConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fedni::Result<()> {
    let g = generate_population(&CohortSpec {
        n: 100,
        d: 20,
        ..Default::default()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut gen = Generator::new(g.feature_dim(), g.phenotypes.fields(), &mut rng);
    let mut disc = Discriminator::new(g.feature_dim(), &mut rng);
    let cfg = InpaintConfig::default();
    for step in 0..300 {
        let r = local_inpaint_train_step(&g, &mut gen, Some(&mut disc), &cfg, step, &mut rng)?;
        if step % 50 == 0 || step == 299 {
            println!(
                "step {step:>3}: num {:.3} rec/slot {:.3} gen {:?} dis {:?}",
                r.num,
                r.rec / r.slots.max(1) as f64,
                r.gen.map(|v| (v * 1e3).round() / 1e3),
                r.dis.map(|v| (v * 1e3).round() / 1e3)
            );
        }
    }
    let fused = graph_merge(&g, &mut gen, &MergeConfig::default(), &mut rng)?;
    println!(
        "fused graph: {} real + {} generated nodes",
        fused.base_count,
        fused.generated_count()
    );
    Ok(())
}
