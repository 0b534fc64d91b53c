//! Flat `key = value` configuration for experiments and cohorts.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{CohortSpec, PartitionMode};
use crate::error::{FedniError, Result};
use crate::federation::{FedConfig, InpaintFl, TransportMode, DEFAULT_SIGMA_DP};
use crate::graphcons::{GraphConfig, SigmaChoice};
use crate::inpaint::{InpaintConfig, MergeConfig};
use crate::masking::{MaskConfig, MaskStrategy};
use crate::numerics::{Adam, Optimizer};

/// Environment variable that replaces the master seed.
pub const SEED_ENV: &str = "FEDNI_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Inpainting then federated classification.
    Fedni,
    /// Federated classification on the raw local graphs.
    Fedgcn,
    /// Every client trains alone.
    Localgcn,
    /// One classifier on the pooled cohort graph.
    Centralgcn,
    /// Federated classification after random inpainting.
    RandomInpaint,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Localgcn,
        Mode::Fedgcn,
        Mode::Centralgcn,
        Mode::RandomInpaint,
        Mode::Fedni,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Fedni => "fedni",
            Mode::Fedgcn => "fedgcn",
            Mode::Localgcn => "localgcn",
            Mode::Centralgcn => "centralgcn",
            Mode::RandomInpaint => "random_inpaint",
        }
    }

    pub fn needs_inpainting(self) -> bool {
        matches!(self, Mode::Fedni | Mode::RandomInpaint)
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub inpaint_fl: InpaintFl,
    pub masking: MaskStrategy,
    pub use_discriminator: bool,
    pub use_edge_prediction: bool,
    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
    /// Edges per generated node; `None` means `k`.
    pub k_prime: Option<usize>,
    pub gamma: f64,
    /// Kernel width; `None` means the mean pairwise distance.
    pub sigma: Option<f64>,
    pub d_h: Option<usize>,
    pub n_max: usize,
    pub mask_fraction: f64,
    pub clients: usize,
    pub inpaint_rounds: usize,
    pub inpaint_epochs: usize,
    pub classify_rounds: usize,
    pub classify_epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub sigma_dp: f64,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub partition: PartitionMode,
    pub transport: TransportMode,
    pub disc_interval: usize,
    pub power_iters: usize,
    /// Recompute the fused graphs after every phase-one round.
    pub remerge_each_round: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Fedni,
            inpaint_fl: InpaintFl::FlG,
            masking: MaskStrategy::Bfs,
            use_discriminator: true,
            use_edge_prediction: true,
            alpha: 1.0,
            beta: 1.0,
            k: 10,
            k_prime: None,
            gamma: 2.0,
            sigma: None,
            d_h: None,
            n_max: 5,
            mask_fraction: 0.125,
            clients: 5,
            inpaint_rounds: 30,
            inpaint_epochs: 10,
            classify_rounds: 10,
            classify_epochs: 10,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            sigma_dp: DEFAULT_SIGMA_DP,
            folds: 5,
            repeats: 5,
            seed: 0,
            partition: PartitionMode::Rebuild,
            transport: TransportMode::InProcess,
            disc_interval: 1,
            power_iters: 1,
            remerge_each_round: false,
        }
    }
}

/// Every experiment key with its default and meaning.
pub const EXPERIMENT_KEYS: &[(&str, &str, &str)] = &[
    (
        "mode",
        "fedni",
        "fedni | fedgcn | localgcn | centralgcn | random_inpaint",
    ),
    (
        "inpaint_fl",
        "fl_g",
        "which inpainting nets are federated: fl_g | fl_d | fl_d_g | nofl_d_g",
    ),
    ("masking", "bfs", "episode masking: bfs | random"),
    (
        "use_discriminator",
        "true",
        "train the adversarial discriminator",
    ),
    (
        "use_edge_prediction",
        "true",
        "connect generated nodes by fused similarity (else parent only)",
    ),
    ("alpha", "1", "weight of the reconstruction loss"),
    ("beta", "1", "weight of the adversarial loss"),
    ("k", "10", "neighbours kept per node when building graphs"),
    ("k_prime", "k", "edges kept per generated node"),
    ("gamma", "2", "age window for phenotype agreement"),
    (
        "sigma",
        "auto",
        "kernel width; auto = mean pairwise distance",
    ),
    ("d_h", "auto", "PCA width; auto = min(64, n, d)"),
    ("n_max", "5", "missing-neighbour count normalizer"),
    (
        "mask_fraction",
        "0.125",
        "share of nodes hidden per episode",
    ),
    ("clients", "5", "number of silos M"),
    ("inpaint_rounds", "30", "phase-one communication rounds T"),
    ("inpaint_epochs", "10", "phase-one local steps E per round"),
    ("classify_rounds", "10", "phase-two communication rounds T"),
    (
        "classify_epochs",
        "10",
        "phase-two local epochs E per round",
    ),
    ("lr", "0.001", "learning rate"),
    ("optimizer", "adam", "adam | sgd (phase two)"),
    ("sigma_dp", "0.01", "std of Gaussian noise added to uploads"),
    ("folds", "5", "cross-validation folds over labeled nodes"),
    ("repeats", "5", "repetitions with fresh partitions"),
    ("seed", "0", "master seed (FEDNI_SEED overrides)"),
    ("partition", "rebuild", "rebuild | induced client graphs"),
    ("transport", "inprocess", "inprocess | serialized uploads"),
    (
        "disc_interval",
        "1",
        "generator steps per discriminator step; 0 disables",
    ),
    (
        "power_iters",
        "1",
        "spectral-norm power iterations per discriminator step",
    ),
    (
        "remerge_each_round",
        "false",
        "experimental: redo graph merge after every phase-one round",
    ),
];

/// Keys that only matter when inpainting runs.
const INPAINT_KEYS: &[&str] = &[
    "inpaint_fl",
    "masking",
    "use_discriminator",
    "use_edge_prediction",
    "alpha",
    "beta",
    "k_prime",
    "n_max",
    "mask_fraction",
    "inpaint_rounds",
    "inpaint_epochs",
    "disc_interval",
    "power_iters",
    "remerge_each_round",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| FedniError::Config(format!("invalid value '{v}' for '{key}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(FedniError::Config(format!(
            "'{key}' expects true or false, got '{v}'"
        ))),
    }
}

fn parse_auto<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

/// Splits text into `(line, key, value)` triples, skipping blanks and `#`
/// comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            FedniError::Config(format!("line {}: expected 'key = value'", no + 1))
        })?;
        out.push((no + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let err = |m: String| FedniError::Config(m);
        match key {
            "mode" => self.mode = v.parse().map_err(err)?,
            "inpaint_fl" => {
                self.inpaint_fl = match v {
                    "fl_g" => InpaintFl::FlG,
                    "fl_d" => InpaintFl::FlD,
                    "fl_d_g" => InpaintFl::FlDG,
                    "nofl_d_g" => InpaintFl::NoflDG,
                    _ => return Err(err(format!("unknown inpaint_fl '{v}'"))),
                }
            }
            "masking" => {
                self.masking = match v {
                    "bfs" => MaskStrategy::Bfs,
                    "random" => MaskStrategy::Random,
                    _ => return Err(err(format!("unknown masking '{v}'"))),
                }
            }
            "use_discriminator" => self.use_discriminator = parse_bool(key, v)?,
            "use_edge_prediction" => self.use_edge_prediction = parse_bool(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "k_prime" => self.k_prime = if v == "k" { None } else { parse_auto(key, v)? },
            "gamma" => self.gamma = parse(key, v)?,
            "sigma" => self.sigma = parse_auto(key, v)?,
            "d_h" => self.d_h = parse_auto(key, v)?,
            "n_max" => self.n_max = parse(key, v)?,
            "mask_fraction" => self.mask_fraction = parse(key, v)?,
            "clients" => self.clients = parse(key, v)?,
            "inpaint_rounds" => self.inpaint_rounds = parse(key, v)?,
            "inpaint_epochs" => self.inpaint_epochs = parse(key, v)?,
            "classify_rounds" => self.classify_rounds = parse(key, v)?,
            "classify_epochs" => self.classify_epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(err(format!("unknown optimizer '{v}'"))),
                }
            }
            "sigma_dp" => self.sigma_dp = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "repeats" => self.repeats = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "partition" => {
                self.partition = match v {
                    "rebuild" => PartitionMode::Rebuild,
                    "induced" => PartitionMode::Induced,
                    _ => return Err(err(format!("unknown partition '{v}'"))),
                }
            }
            "transport" => {
                self.transport = match v {
                    "inprocess" => TransportMode::InProcess,
                    "serialized" => TransportMode::Serialized,
                    _ => return Err(err(format!("unknown transport '{v}'"))),
                }
            }
            "disc_interval" => self.disc_interval = parse(key, v)?,
            "power_iters" => self.power_iters = parse(key, v)?,
            "remerge_each_round" => self.remerge_each_round = parse_bool(key, v)?,
            _ => return Err(err(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (line, k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)
                .map_err(|e| FedniError::Config(format!("line {line}: {e}")))?;
            if !seen.insert(k.clone()) {
                return Err(FedniError::Config(format!(
                    "line {line}: '{k}' given twice"
                )));
            }
        }
        if !cfg.mode.needs_inpainting() {
            if let Some(k) = INPAINT_KEYS.iter().find(|k| seen.contains(**k)) {
                return Err(FedniError::Config(format!(
                    "'{k}' only applies to inpainting modes, not {}",
                    cfg.mode.name()
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `FEDNI_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Some(s) = seed_from_env()? {
            self.seed = s;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FedniError::Config(m.to_string()));
        if self.clients == 0 {
            return bad("clients must be at least 1");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if self.k == 0 || self.k_prime == Some(0) {
            return bad("k and k_prime must be at least 1");
        }
        if self.inpaint_rounds == 0
            || self.inpaint_epochs == 0
            || self.classify_rounds == 0
            || self.classify_epochs == 0
        {
            return bad("rounds and epochs must be at least 1");
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 0.5) {
            return bad("mask_fraction must lie in (0, 0.5)");
        }
        if !(self.lr > 0.0) || !(self.sigma_dp >= 0.0) || !(self.gamma > 0.0) {
            return bad("lr and gamma must be positive and sigma_dp non-negative");
        }
        if self.sigma.is_some_and(|s| !(s > 0.0)) {
            return bad("sigma must be positive");
        }
        if self.n_max == 0 {
            return bad("n_max must be at least 1");
        }
        Ok(())
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            k: self.k,
            gamma: self.gamma,
            sigma: self
                .sigma
                .map_or(SigmaChoice::MeanDistance, SigmaChoice::Fixed),
            d_h: self.d_h,
        }
    }

    pub fn inpaint_config(&self) -> InpaintConfig {
        InpaintConfig {
            alpha: self.alpha,
            beta: self.beta,
            optimizer: Adam::new(self.lr),
            mask: MaskConfig {
                target_fraction: self.mask_fraction,
                n_max: self.n_max,
                strategy: self.masking,
            },
            use_discriminator: self.use_discriminator,
            disc_interval: self.disc_interval,
            power_iters: self.power_iters,
        }
    }

    pub fn merge_config(&self) -> MergeConfig {
        MergeConfig {
            k_prime: self.k_prime.unwrap_or(self.k),
            n_max: self.n_max,
            use_edge_prediction: self.use_edge_prediction,
        }
    }

    pub fn phase1_fed(&self) -> FedConfig {
        FedConfig {
            rounds: self.inpaint_rounds,
            local_epochs: self.inpaint_epochs,
            sigma_dp: self.sigma_dp,
            transport: self.transport,
        }
    }

    pub fn phase2_fed(&self) -> FedConfig {
        FedConfig {
            rounds: self.classify_rounds,
            local_epochs: self.classify_epochs,
            sigma_dp: self.sigma_dp,
            transport: self.transport,
        }
    }

    pub fn classify_optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(self.lr)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr: self.lr },
        }
    }

    /// A commented config file listing every key at its default.
    pub fn documented_defaults() -> String {
        let mut s = String::from("# fedni experiment configuration\n");
        for (k, d, doc) in EXPERIMENT_KEYS {
            s.push_str(&format!("# {doc}\n{k} = {d}\n"));
        }
        s
    }
}

pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            FedniError::Config(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))
        }),
        Err(_) => Ok(None),
    }
}

/// Cohort keys with defaults and meaning.
pub const COHORT_KEYS: &[(&str, &str, &str)] = &[
    ("n", "500", "subjects"),
    ("d", "50", "feature dimension"),
    ("class_sep", "2.5", "distance between class means"),
    ("label_balance", "0.5", "fraction of class 1"),
    (
        "labeled_rate",
        "0.8",
        "fraction of subjects with visible labels",
    ),
    ("p_male_0", "0.45", "P(sex = m) in class 0"),
    ("p_male_1", "0.55", "P(sex = m) in class 1"),
    ("age_mean_0", "70", "mean age in class 0"),
    ("age_mean_1", "75", "mean age in class 1"),
    ("age_std", "5", "age standard deviation"),
    ("k", "10", "neighbours kept per node"),
    ("gamma", "2", "age window for phenotype agreement"),
    ("sigma", "auto", "kernel width"),
    ("d_h", "auto", "PCA width"),
    ("seed", "0", "generation seed (FEDNI_SEED overrides)"),
];

pub fn parse_cohort(text: &str) -> Result<CohortSpec> {
    let mut s = CohortSpec::default();
    for (line, k, v) in parse_pairs(text)? {
        let k = k.as_str();
        let v = v.as_str();
        let r: Result<()> = (|| {
            match k {
                "n" => s.n = parse(k, v)?,
                "d" => s.d = parse(k, v)?,
                "class_sep" => s.class_sep = parse(k, v)?,
                "label_balance" => s.label_balance = parse(k, v)?,
                "labeled_rate" => s.labeled_rate = parse(k, v)?,
                "p_male_0" => s.pheno.p_male[0] = parse(k, v)?,
                "p_male_1" => s.pheno.p_male[1] = parse(k, v)?,
                "age_mean_0" => s.pheno.age_mean[0] = parse(k, v)?,
                "age_mean_1" => s.pheno.age_mean[1] = parse(k, v)?,
                "age_std" => s.pheno.age_std = parse(k, v)?,
                "k" => s.graph.k = parse(k, v)?,
                "gamma" => s.graph.gamma = parse(k, v)?,
                "sigma" => {
                    s.graph.sigma =
                        parse_auto(k, v)?.map_or(SigmaChoice::MeanDistance, SigmaChoice::Fixed)
                }
                "d_h" => s.graph.d_h = parse_auto(k, v)?,
                "seed" => s.seed = parse(k, v)?,
                _ => return Err(FedniError::Config(format!("unknown key '{k}'"))),
            }
            Ok(())
        })();
        r.map_err(|e| FedniError::Config(format!("line {line}: {e}")))?;
    }
    if let Some(seed) = seed_from_env()? {
        s.seed = seed;
    }
    s.validate()
        .map_err(|e| FedniError::Config(e.to_string()))?;
    Ok(s)
}
