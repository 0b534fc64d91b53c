//! Cross-validated comparison of every training mode at reduced scale.

use fedni::datagen::{generate_population, CohortSpec};
use fedni::harness::{run_modes, ExperimentConfig, Mode};

fn main() -> fedni::Result<()> {
    let data = generate_population(&CohortSpec {
        n: 250,
        d: 20,
        ..Default::default()
    })?;
    let cfg = ExperimentConfig {
        repeats: 2,
        folds: 3,
        inpaint_rounds: 10,
        inpaint_epochs: 5,
        ..Default::default()
    };
    let modes = [
        Mode::Localgcn,
        Mode::Fedgcn,
        Mode::Centralgcn,
        Mode::RandomInpaint,
        Mode::Fedni,
    ];
    let (report, timings) = run_modes(&cfg, &data, &modes)?;
    for r in &report.results {
        let s = r.summary;
        println!(
            "{:<15} acc {:.3} ± {:.3}  auc {:.3} ± {:.3}",
            r.mode.name(),
            s.accuracy.mean,
            s.accuracy.std,
            s.auc.mean,
            s.auc.std
        );
    }
    for q in &report.inpainting {
        println!(
            "repeat {}: generated {:?}, frechet {:.3}",
            q.repeat, q.generated_per_client, q.quality.frechet
        );
    }
    println!("{:.1} s total", timings.total_ms / 1e3);
    Ok(())
}
