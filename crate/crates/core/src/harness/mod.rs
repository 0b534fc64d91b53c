//! Experiment orchestration: configuration, cross-validated runs of every
//! mode, ablation matrices, reports and self-checks.

pub mod ablation;
pub mod config;
pub mod quality;
pub mod report;
pub mod runner;
pub mod seeds;
pub mod verify;

pub use ablation::{
    pooled_t_test, run_ablation, AblationMatrix, AblationReport, Comparison, TTest, VariantResult,
};
pub use config::{parse_cohort, ExperimentConfig, Mode, OptimizerKind, SEED_ENV};
pub use quality::{frechet_diagonal, generator_quality, GeneratorQuality};
pub use report::{write_ablation, write_experiment};
pub use runner::{
    run_experiment, run_inpainting, run_modes, setup_repeat, CellResult, ExperimentReport,
    InpaintSummary, ModeResult, RepeatSetup, Stat, Summary, Timings,
};
pub use verify::{run_checks, Check};
