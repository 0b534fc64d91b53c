//! Two-layer GCN trained on a random half of the labeled nodes.

use fedni::classifier::{evaluate_metrics, train_step, Classifier, GraphInput};
use fedni::datagen::{generate_population, CohortSpec};
use fedni::numerics::{Adam, Optimizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fedni::Result<()> {
    let g = generate_population(&CohortSpec::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let split: Vec<bool> = (0..g.node_count()).map(|_| rng.random_bool(0.5)).collect();
    let train: Vec<bool> = g
        .labeled
        .iter()
        .zip(&split)
        .map(|(&l, &s)| l && s)
        .collect();
    let test: Vec<bool> = g
        .labeled
        .iter()
        .zip(&split)
        .map(|(&l, &s)| l && !s)
        .collect();

    let input = GraphInput::new(&g);
    let mut clf = Classifier::new(g.feature_dim(), &mut rng);
    let opt = Optimizer::Adam(Adam::new(1e-3));
    for epoch in 0..100 {
        let loss = train_step(&mut clf, &input, &g.labels, &train, &opt)?;
        if epoch % 20 == 0 {
            println!("epoch {epoch:>3}: loss {loss:.3}");
        }
    }
    let m = evaluate_metrics(&clf.predict_positive(&input)?, &g.labels, &test)?;
    println!(
        "test accuracy {:.3}, auc {:.3}, f1 {:.3}",
        m.accuracy,
        m.auc.unwrap_or(f64::NAN),
        m.f1
    );
    Ok(())
}
