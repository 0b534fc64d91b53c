//! A small ablation matrix: masking strategy and discriminator on/off.

use fedni::datagen::{generate_population, CohortSpec};
use fedni::harness::{run_ablation, AblationMatrix};

const MATRIX: &str = "
mode = fedni
repeats = 2
folds = 3
inpaint_rounds = 8
inpaint_epochs = 5

[base]
[random_mask]
masking = random
[no_disc]
use_discriminator = false
";

fn main() -> fedni::Result<()> {
    let data = generate_population(&CohortSpec {
        n: 200,
        d: 20,
        ..Default::default()
    })?;
    let matrix = AblationMatrix::parse(MATRIX)?;
    let (report, _) = run_ablation(&matrix, &data)?;
    for c in report
        .comparisons
        .iter()
        .filter(|c| c.metric == "auc" || c.metric == "frechet")
    {
        let p = c.test.map_or(f64::NAN, |t| t.p);
        println!(
            "{:<12} vs {}: {:<8} {:.4} vs {:.4} (p {p:.3})",
            c.variant, c.reference, c.metric, c.mean_variant, c.mean_reference
        );
    }
    Ok(())
}
