//! Cross-validated experiment runs for every training mode.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate_metrics, train_step, Classifier, GraphInput, MetricsReport};
use crate::error::{FedniError, Result};
use crate::federation::{
    run_phase1, run_phase1_observed, run_phase2, AuditPolicy, AuditReport, ClassifierClient,
    FedConfig, InpaintClient, PhaseReport, RoundLog, Transport, TransportMode,
};
use crate::graphcons::PopulationGraph;
use crate::inpaint::{
    graph_merge, predict_counts, random_merge, Discriminator, FusedGraph, Generator, MergeConfig,
};
use crate::numerics::Module;

use super::config::{ExperimentConfig, Mode};
use super::quality::{generator_quality, GeneratorQuality};
use super::seeds::{derive, rng, stream};

/// Fold of every node of one client; `None` for unlabeled nodes.
pub type FoldMap = Vec<Option<usize>>;

/// Partition and fold assignment shared by every mode within a repeat.
#[derive(Clone, Debug)]
pub struct RepeatSetup {
    pub repeat: usize,
    pub seed: u64,
    pub clients: Vec<PopulationGraph>,
    pub folds: Vec<FoldMap>,
}

pub fn repeat_seed(cfg: &ExperimentConfig, repeat: usize) -> u64 {
    derive(cfg.seed, &[stream::REPEAT, repeat as u64])
}

/// Splits the cohort into silos and, within each silo, deals its labeled
/// nodes round-robin into folds after a shuffle.
pub fn setup_repeat(
    cfg: &ExperimentConfig,
    data: &PopulationGraph,
    repeat: usize,
) -> Result<RepeatSetup> {
    let seed = repeat_seed(cfg, repeat);
    let clients = crate::datagen::partition_clients(
        data,
        cfg.clients,
        derive(seed, &[stream::PARTITION]),
        cfg.partition,
        &cfg.graph_config(),
        0.0,
    )?;
    let folds = clients
        .iter()
        .enumerate()
        .map(|(m, g)| {
            let mut labeled: Vec<usize> = (0..g.node_count()).filter(|&i| g.labeled[i]).collect();
            labeled.shuffle(&mut rng(seed, &[stream::FOLDS, m as u64]));
            let mut map = vec![None; g.node_count()];
            for (pos, &i) in labeled.iter().enumerate() {
                map[i] = Some(pos % cfg.folds);
            }
            map
        })
        .collect();
    Ok(RepeatSetup {
        repeat,
        seed,
        clients,
        folds,
    })
}

/// Trained inpainting state for one repeat.
#[derive(Clone, Debug)]
pub struct InpaintOutcome {
    pub fused: Vec<FusedGraph>,
    pub random: Vec<FusedGraph>,
    /// Total generated nodes after each round; empty unless remerging.
    pub generated_per_round: Vec<usize>,
    pub report: PhaseReport,
    pub audit: AuditReport,
    pub quality: GeneratorQuality,
    pub generators: Vec<Generator>,
}

pub fn inpaint_policy(cfg: &ExperimentConfig) -> AuditPolicy {
    let mut shared = Vec::new();
    if cfg.inpaint_fl.shares_generator() {
        shared.push("gen.");
    }
    if cfg.inpaint_fl.shares_discriminator() {
        shared.push("disc.");
    }
    AuditPolicy::new(&shared, &["clf."])
}

/// Phase one: federated generator training, then each client splices its
/// predicted neighbours in (and, for the baseline, random ones).
pub fn run_inpainting(cfg: &ExperimentConfig, setup: &RepeatSetup) -> Result<InpaintOutcome> {
    let seed = setup.seed;
    let first = setup
        .clients
        .first()
        .ok_or_else(|| FedniError::Parameter("no clients".into()))?;
    let gen0 = Generator::new(
        first.feature_dim(),
        first.phenotypes.fields(),
        &mut rng(seed, &[stream::GENERATOR]),
    );
    let disc0 = Discriminator::new(
        first.feature_dim(),
        &mut rng(seed, &[stream::DISCRIMINATOR]),
    );
    let mut clients: Vec<InpaintClient> = setup
        .clients
        .iter()
        .enumerate()
        .map(|(m, g)| InpaintClient {
            graph: g.clone(),
            gen: gen0.clone(),
            disc: disc0.clone(),
            rng: rng(seed, &[stream::CLIENT, m as u64]),
            dp_rng: rng(seed, &[stream::DP, u64::MAX, m as u64]),
            steps: 0,
        })
        .collect();
    let mut transport = Transport::new(cfg.transport);
    for g in &setup.clients {
        transport.register_canaries(&g.features);
    }
    let merge = cfg.merge_config();
    let (report, latest, generated_per_round) = if cfg.remerge_each_round {
        let mut latest = None;
        let mut per_round = Vec::with_capacity(cfg.inpaint_rounds);
        let mut hook = |round: usize, clients: &mut [InpaintClient]| -> Result<()> {
            let m = merge_all(clients, &merge, seed, Some(round))?;
            per_round.push(m.0.iter().map(FusedGraph::generated_count).sum());
            latest = Some(m);
            Ok(())
        };
        let report = run_phase1_observed(
            &mut clients,
            &cfg.phase1_fed(),
            &cfg.inpaint_config(),
            cfg.inpaint_fl,
            &mut transport,
            Some(&mut hook),
        )?;
        (report, latest, per_round)
    } else {
        let report = run_phase1(
            &mut clients,
            &cfg.phase1_fed(),
            &cfg.inpaint_config(),
            cfg.inpaint_fl,
            &mut transport,
        )?;
        (report, None, Vec::new())
    };
    let audit = transport.audit(&inpaint_policy(cfg));

    let mut pairs: Vec<_> = clients.iter_mut().map(|c| (&c.graph, &mut c.gen)).collect();
    let quality = generator_quality(
        &mut pairs,
        &cfg.inpaint_config().mask,
        &mut rng(seed, &[stream::QUALITY]),
    )?;
    let (fused, random) = match latest {
        Some(m) => m,
        None => merge_all(&mut clients, &merge, seed, None)?,
    };
    Ok(InpaintOutcome {
        fused,
        random,
        generated_per_round,
        report,
        audit,
        quality,
        generators: clients.into_iter().map(|c| c.gen).collect(),
    })
}

/// Splices predicted neighbours into every client graph, and random
/// neighbours for the baseline. `round` is set when remerging.
fn merge_all(
    clients: &mut [InpaintClient],
    merge: &MergeConfig,
    seed: u64,
    round: Option<usize>,
) -> Result<(Vec<FusedGraph>, Vec<FusedGraph>)> {
    let mut fused = Vec::with_capacity(clients.len());
    let mut random = Vec::with_capacity(clients.len());
    for (m, c) in clients.iter_mut().enumerate() {
        if c.graph.node_count() == 0 {
            fused.push(FusedGraph::unchanged(&c.graph));
            random.push(FusedGraph::unchanged(&c.graph));
            continue;
        }
        let mut fused_key = vec![stream::MERGE, m as u64];
        let mut random_key = vec![stream::MERGE, u64::MAX, m as u64];
        if let Some(r) = round {
            fused_key.push(r as u64);
            random_key.push(r as u64);
        }
        fused.push(graph_merge(
            &c.graph,
            &mut c.gen,
            merge,
            &mut rng(seed, &fused_key),
        )?);
        let counts = predict_counts(&c.graph, &c.gen, merge.n_max);
        random.push(random_merge(
            &c.graph,
            &counts,
            merge,
            &mut rng(seed, &random_key),
        )?);
    }
    Ok((fused, random))
}

/// One classification problem: a graph with its train and test nodes.
#[derive(Clone, Debug)]
pub struct Task<'a> {
    pub graph: &'a PopulationGraph,
    pub train: Vec<bool>,
    pub test: Vec<bool>,
}

/// Pooled test predictions from one cell.
#[derive(Clone, Debug, Default)]
pub struct Predictions {
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Predictions {
    pub fn metrics(&self) -> Result<MetricsReport> {
        evaluate_metrics(&self.probs, &self.labels, &vec![true; self.probs.len()])
    }
}

fn collect(
    preds: &mut Predictions,
    task: &Task,
    clf: &Classifier,
    input: &GraphInput,
) -> Result<()> {
    if !task.test.iter().any(|&b| b) {
        return Ok(());
    }
    let p = clf.predict_positive(input)?;
    for i in (0..task.test.len()).filter(|&i| task.test[i]) {
        preds.probs.push(p[i]);
        preds.labels.push(task.graph.labels[i]);
    }
    Ok(())
}

/// Federated classification over `tasks`; every client starts from the
/// same initialization drawn from `seed`.
pub fn classify_federated(
    tasks: &[Task],
    fed: &FedConfig,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Predictions, PhaseReport, AuditReport)> {
    let d = tasks
        .first()
        .ok_or_else(|| FedniError::Parameter("no clients".into()))?
        .graph
        .feature_dim();
    let init = Classifier::new(d, &mut rng(seed, &[stream::CLASSIFIER]));
    let mut clients: Vec<ClassifierClient> = tasks
        .iter()
        .enumerate()
        .map(|(m, t)| ClassifierClient {
            input: GraphInput::new(t.graph),
            labels: t.graph.labels.clone(),
            train_mask: t.train.clone(),
            clf: init.clone(),
            dp_rng: rng(seed, &[stream::DP, m as u64]),
        })
        .collect();
    let mut transport = Transport::new(fed.transport);
    let report = run_phase2(&mut clients, fed, &cfg.classify_optimizer(), &mut transport)?;
    let audit = transport.audit(&AuditPolicy::new(&[], &["clf."]));
    let mut preds = Predictions::default();
    for (t, c) in tasks.iter().zip(&clients) {
        collect(&mut preds, t, &c.clf, &c.input)?;
    }
    Ok((preds, report, audit))
}

/// Every client trains alone for `rounds · epochs` epochs.
pub fn classify_local(
    tasks: &[Task],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Predictions, PhaseReport)> {
    let d = tasks
        .first()
        .ok_or_else(|| FedniError::Parameter("no clients".into()))?
        .graph
        .feature_dim();
    let init = Classifier::new(d, &mut rng(seed, &[stream::CLASSIFIER]));
    let opt = cfg.classify_optimizer();
    let mut report = PhaseReport::default();
    let mut preds = Predictions::default();
    let mut trained = Vec::with_capacity(tasks.len());
    for (m, t) in tasks.iter().enumerate() {
        if t.graph.node_count() == 0 || !t.train.iter().any(|&b| b) {
            report
                .excluded
                .push((m, "no labeled training nodes".into()));
            trained.push(None);
            continue;
        }
        let input = GraphInput::new(t.graph);
        let mut clf = init.clone();
        let mut per_round = Vec::with_capacity(cfg.classify_rounds);
        for _ in 0..cfg.classify_rounds {
            let mut total = 0.0;
            for _ in 0..cfg.classify_epochs {
                total += train_step(&mut clf, &input, &t.graph.labels, &t.train, &opt)?;
            }
            per_round.push(total / cfg.classify_epochs as f64);
        }
        trained.push(Some((clf, input, per_round)));
    }
    for round in 0..cfg.classify_rounds {
        report.logs.push(RoundLog {
            round,
            client_losses: trained.iter().flatten().map(|(_, _, l)| l[round]).collect(),
            server_loss: None,
            wall_ms: 0.0,
        });
    }
    for (t, c) in tasks.iter().zip(&trained) {
        if let Some((clf, input, _)) = c {
            collect(&mut preds, t, clf, input)?;
        }
    }
    Ok((preds, report))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: Stat,
    pub auc: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub f1: Stat,
}

/// Metric names in report order.
pub const METRICS: [&str; 5] = ["accuracy", "auc", "precision", "recall", "f1"];

pub fn metric_value(m: &MetricsReport, name: &str) -> Option<f64> {
    match name {
        "accuracy" => Some(m.accuracy),
        "auc" => m.auc,
        "precision" => Some(m.precision),
        "recall" => Some(m.recall),
        "f1" => Some(m.f1),
        _ => None,
    }
}

impl Summary {
    pub fn of(cells: &[CellResult]) -> Self {
        let col = |name| {
            let v: Vec<f64> = cells
                .iter()
                .filter_map(|c| metric_value(&c.metrics, name))
                .collect();
            Stat::of(&v)
        };
        Self {
            accuracy: col("accuracy"),
            auc: col("auc"),
            precision: col("precision"),
            recall: col("recall"),
            f1: col("f1"),
        }
    }

    pub fn get(&self, name: &str) -> Option<Stat> {
        match name {
            "accuracy" => Some(self.accuracy),
            "auc" => Some(self.auc),
            "precision" => Some(self.precision),
            "recall" => Some(self.recall),
            "f1" => Some(self.f1),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub repeat: usize,
    pub fold: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub excluded: Vec<(usize, String)>,
    pub logs: Vec<RoundLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: Mode,
    pub summary: Summary,
    pub audit: AuditReport,
    pub cells: Vec<CellResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintSummary {
    pub repeat: usize,
    pub seed: u64,
    pub logs: Vec<RoundLog>,
    pub excluded: Vec<(usize, String)>,
    pub audit: AuditReport,
    pub generated_per_client: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generated_per_round: Vec<usize>,
    pub quality: GeneratorQuality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub repeat_seeds: Vec<u64>,
    pub parameter_counts: BTreeMap<String, usize>,
    pub inpainting: Vec<InpaintSummary>,
    pub results: Vec<ModeResult>,
}

impl ExperimentReport {
    pub fn result(&self, mode: Mode) -> Option<&ModeResult> {
        self.results.iter().find(|r| r.mode == mode)
    }
}

/// Wall-clock costs, kept apart from the report so reports stay
/// reproducible byte for byte.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub inpainting_ms: Vec<f64>,
    pub mode_ms: BTreeMap<String, f64>,
    pub total_ms: f64,
}

fn merge_audit(into: &mut AuditReport, from: AuditReport) {
    into.messages += from.messages;
    into.weight_messages += from.weight_messages;
    into.violations.extend(from.violations);
}

fn parameter_counts(data: &PopulationGraph) -> BTreeMap<String, usize> {
    let mut r = rng(0, &[]);
    let d = data.feature_dim();
    BTreeMap::from([
        (
            "classifier".to_string(),
            Classifier::new(d, &mut r).parameter_count(),
        ),
        (
            "generator".to_string(),
            Generator::new(d, data.phenotypes.fields(), &mut r).parameter_count(),
        ),
        (
            "discriminator".to_string(),
            Discriminator::new(d, &mut r).parameter_count(),
        ),
    ])
}

/// Runs `cfg.mode` alone.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &PopulationGraph,
) -> Result<(ExperimentReport, Timings)> {
    run_modes(cfg, data, &[cfg.mode])
}

/// Runs several modes over identical partitions, folds and classifier
/// initializations. Inpainting is trained once per repeat and shared by
/// every mode that needs it.
pub fn run_modes(
    cfg: &ExperimentConfig,
    data: &PopulationGraph,
    modes: &[Mode],
) -> Result<(ExperimentReport, Timings)> {
    cfg.validate()?;
    if modes.is_empty() {
        return Err(FedniError::Config("no modes requested".into()));
    }
    let start = Instant::now();
    let mut timings = Timings::default();
    let mut cells: Vec<Vec<CellResult>> = vec![Vec::new(); modes.len()];
    let mut audits = vec![AuditReport::default(); modes.len()];
    let mut inpainting = Vec::new();
    let mut repeat_seeds = Vec::new();
    let need_inpaint = modes.iter().any(|m| m.needs_inpainting());

    for repeat in 0..cfg.repeats {
        let setup = setup_repeat(cfg, data, repeat)?;
        repeat_seeds.push(setup.seed);
        let outcome = if need_inpaint {
            let t = Instant::now();
            let o = run_inpainting(cfg, &setup)?;
            timings.inpainting_ms.push(t.elapsed().as_secs_f64() * 1e3);
            inpainting.push(InpaintSummary {
                repeat,
                seed: setup.seed,
                logs: o.report.logs.clone(),
                excluded: o.report.excluded.clone(),
                audit: o.audit.clone(),
                generated_per_client: o.fused.iter().map(FusedGraph::generated_count).collect(),
                generated_per_round: o.generated_per_round.clone(),
                quality: o.quality,
            });
            Some(o)
        } else {
            None
        };
        let central = if modes.contains(&Mode::Centralgcn) {
            let all: Vec<usize> = (0..data.node_count()).collect();
            let mut g = data.rebuild(&all, &cfg.graph_config())?;
            g.node_ids = data.node_ids.clone();
            let mut by_id = BTreeMap::new();
            for (c, f) in setup.clients.iter().zip(&setup.folds) {
                for (i, &id) in c.node_ids.iter().enumerate() {
                    by_id.insert(id, f[i]);
                }
            }
            let folds: FoldMap = g
                .node_ids
                .iter()
                .map(|id| by_id.get(id).copied().flatten())
                .collect();
            Some((g, folds))
        } else {
            None
        };

        for fold in 0..cfg.folds {
            let cell_seed = derive(setup.seed, &[stream::CLASSIFIER, fold as u64]);
            let masks = |fm: &FoldMap, extra: usize| {
                let train: Vec<bool> = fm
                    .iter()
                    .map(|f| f.is_some_and(|f| f != fold))
                    .chain(std::iter::repeat_n(false, extra))
                    .collect();
                let test: Vec<bool> = fm
                    .iter()
                    .map(|f| *f == Some(fold))
                    .chain(std::iter::repeat_n(false, extra))
                    .collect();
                (train, test)
            };
            for (slot, &mode) in modes.iter().enumerate() {
                let t = Instant::now();
                let graphs: Vec<(&PopulationGraph, &FoldMap, usize)> = match mode {
                    Mode::Localgcn | Mode::Fedgcn => setup
                        .clients
                        .iter()
                        .zip(&setup.folds)
                        .map(|(g, f)| (g, f, 0))
                        .collect(),
                    Mode::Centralgcn => {
                        let (g, f) = central.as_ref().expect("built above");
                        vec![(g, f, 0)]
                    }
                    Mode::Fedni | Mode::RandomInpaint => {
                        let o = outcome.as_ref().expect("inpainting ran");
                        let fused = if mode == Mode::Fedni {
                            &o.fused
                        } else {
                            &o.random
                        };
                        fused
                            .iter()
                            .zip(&setup.folds)
                            .map(|(fg, f)| (&fg.graph, f, fg.generated_count()))
                            .collect()
                    }
                };
                let tasks: Vec<Task> = graphs
                    .into_iter()
                    .map(|(graph, fm, extra)| {
                        let (train, test) = masks(fm, extra);
                        Task { graph, train, test }
                    })
                    .collect();
                let (preds, report) = match mode {
                    Mode::Localgcn => classify_local(&tasks, cfg, cell_seed)?,
                    Mode::Centralgcn => {
                        let fed = FedConfig {
                            sigma_dp: 0.0,
                            transport: TransportMode::InProcess,
                            ..cfg.phase2_fed()
                        };
                        let (p, r, a) = classify_federated(&tasks, &fed, cfg, cell_seed)?;
                        merge_audit(&mut audits[slot], a);
                        (p, r)
                    }
                    _ => {
                        let (p, r, a) =
                            classify_federated(&tasks, &cfg.phase2_fed(), cfg, cell_seed)?;
                        merge_audit(&mut audits[slot], a);
                        (p, r)
                    }
                };
                if preds.probs.is_empty() {
                    return Err(FedniError::Parameter(format!(
                        "fold {fold} of repeat {repeat} has no test nodes"
                    )));
                }
                cells[slot].push(CellResult {
                    repeat,
                    fold,
                    seed: cell_seed,
                    metrics: preds.metrics()?,
                    excluded: report.excluded,
                    logs: report.logs,
                });
                *timings.mode_ms.entry(mode.name().to_string()).or_default() +=
                    t.elapsed().as_secs_f64() * 1e3;
            }
        }
    }
    timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    let results = modes
        .iter()
        .zip(cells)
        .zip(audits)
        .map(|((&mode, cells), audit)| ModeResult {
            mode,
            summary: Summary::of(&cells),
            audit,
            cells,
        })
        .collect();
    Ok((
        ExperimentReport {
            config: cfg.clone(),
            repeat_seeds,
            parameter_counts: parameter_counts(data),
            inpainting,
            results,
        },
        timings,
    ))
}
