use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedni::datagen::{generate_population, load_dataset, save_dataset};
use fedni::harness::{
    parse_cohort, run_ablation, run_checks, run_modes, write_ablation, write_experiment,
    AblationMatrix, ExperimentConfig, Mode,
};

#[derive(Parser)]
#[command(
    name = "fedni",
    version,
    about = "Federated graph learning with network inpainting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort from a key=value spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment config (or several modes over it).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated modes to run instead of the config's `mode`.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<Mode>,
    },
    /// Run an ablation matrix.
    Ablate {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in self-checks.
    Verify,
}

fn run(cli: Cli) -> fedni::Result<bool> {
    match cli.command {
        Command::Gen { spec, out } => {
            let spec = parse_cohort(&fs::read_to_string(spec)?)?;
            let g = generate_population(&spec)?;
            save_dataset(&g, &out)?;
            println!(
                "wrote {} subjects x {} features to {}",
                g.node_count(),
                g.feature_dim(),
                out.display()
            );
        }
        Command::Run {
            config,
            data,
            out,
            modes,
        } => {
            let mut cfg = ExperimentConfig::parse(&fs::read_to_string(config)?)?;
            cfg.apply_env()?;
            let data = load_dataset(&data)?;
            let modes = if modes.is_empty() {
                vec![cfg.mode]
            } else {
                modes
            };
            let (report, timings) = run_modes(&cfg, &data, &modes)?;
            write_experiment(&out, &report, &timings)?;
            for r in &report.results {
                let s = &r.summary;
                println!(
                    "{:<15} acc {:.4} ± {:.4}  auc {:.4} ± {:.4}",
                    r.mode.name(),
                    s.accuracy.mean,
                    s.accuracy.std,
                    s.auc.mean,
                    s.auc.std
                );
            }
        }
        Command::Ablate { matrix, data, out } => {
            let mut m = AblationMatrix::parse(&fs::read_to_string(matrix)?)?;
            m.apply_env()?;
            let data = load_dataset(&data)?;
            let (report, timings) = run_ablation(&m, &data)?;
            write_ablation(&out, &report, &timings)?;
            for v in &report.variants {
                println!(
                    "{:<20} acc {:.4}  auc {:.4}  frechet {:.4}",
                    v.name, v.summary.accuracy.mean, v.summary.auc.mean, v.frechet.mean
                );
            }
        }
        Command::Verify => {
            let checks = run_checks();
            for c in &checks {
                println!(
                    "{} {:<14} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("fedni: {e}");
            ExitCode::FAILURE
        }
    }
}
