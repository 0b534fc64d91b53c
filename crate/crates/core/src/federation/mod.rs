//! FedAvg over generator and classifier weights, with DP noise on uploads.

mod rounds;
mod transport;
mod weights;

pub use rounds::{
    run_phase1, run_phase1_observed, run_phase2, ClassifierClient, FedConfig, InpaintClient,
    InpaintFl, PhaseReport, RoundHook, RoundLog, DEFAULT_SIGMA_DP,
};
pub use transport::{
    AuditPolicy, AuditRecord, AuditReport, Payload, PayloadKind, Phase, Transport, TransportMode,
    Upload, LOSS_LABELS,
};
pub use weights::{dp_perturb, fedavg_aggregate, LayerEntry, WeightVector, WIRE_VERSION};
