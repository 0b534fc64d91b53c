//! Missing-neighbour generation: models, adversarial training and graph merge.

mod merge;
mod models;
mod train;

pub use merge::{
    attach, graph_merge, predict_counts, random_merge, FusedGraph, MergeConfig, GENERATED_ID,
};
pub use models::{
    decode_phenotypes, Discriminator, Generator, PhenoScaler, DISC_HIDDEN, EMBED_DIM,
    ENCODER_HIDDEN, FEATURE_HIDDEN, NOISE_DIM, PHENO_HIDDEN,
};
pub use train::{
    adversarial_generator_loss, discriminator_loss, generator_losses, greedy_match,
    local_inpaint_train_step, sample_noise, slot_parents, GeneratorLosses, InpaintConfig,
    StepReport,
};
