//! Inference-time inpainting: append generated neighbours to a local graph.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graphcons::{
    kernel, top_k_indices, FieldKind, PhenoColumn, PhenotypeField, PhenotypeTable, PopulationGraph,
    Provenance,
};
use crate::numerics::{Bind, Matrix, Tape};

use super::models::{decode_phenotypes, Generator, PhenoScaler};
use super::train::sample_noise;

/// Node id given to generated nodes, which exist in no cohort.
pub const GENERATED_ID: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Edges kept per generated node (besides the parent edge).
    pub k_prime: usize,
    pub n_max: usize,
    /// Without it generated nodes hang off their parent by a unit edge only.
    pub use_edge_prediction: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            k_prime: crate::graphcons::DEFAULT_K,
            n_max: crate::masking::DEFAULT_N_MAX,
            use_edge_prediction: true,
        }
    }
}

/// A local graph with generated nodes appended after the real ones.
#[derive(Clone, Debug)]
pub struct FusedGraph {
    pub graph: PopulationGraph,
    pub base_count: usize,
    /// Real parent of each generated node, in generated order.
    pub parents: Vec<usize>,
}

impl FusedGraph {
    pub fn unchanged(g: &PopulationGraph) -> Self {
        Self {
            graph: g.clone(),
            base_count: g.node_count(),
            parents: Vec::new(),
        }
    }

    pub fn generated_count(&self) -> usize {
        self.parents.len()
    }

    /// Nothing was generated.
    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }
}

/// Predicted number of missing neighbours per real node.
pub fn predict_counts(g: &PopulationGraph, gen: &Generator, n_max: usize) -> Vec<usize> {
    let mut tape = Tape::new();
    let x = tape.constant(g.features.clone());
    let a = tape.constant(g.normalized_adjacency());
    let z = gen.encode(&mut tape, x, a, Bind::Frozen);
    let c = gen.count_head(&mut tape, z, Bind::Frozen);
    tape.value(c)
        .data()
        .iter()
        .map(|p| (p * n_max as f64).round().clamp(0.0, n_max as f64) as usize)
        .collect()
}

/// Runs the trained generator over the whole local graph and splices the
/// predicted neighbours in.
pub fn graph_merge<R: Rng + ?Sized>(
    g: &PopulationGraph,
    gen: &mut Generator,
    cfg: &MergeConfig,
    rng: &mut R,
) -> Result<FusedGraph> {
    let counts = predict_counts(g, gen, cfg.n_max);
    let parents: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
        .collect();
    if parents.is_empty() {
        return Ok(FusedGraph::unchanged(g));
    }
    let mut tape = Tape::new();
    let x = tape.constant(g.features.clone());
    let a = tape.constant(g.normalized_adjacency());
    let z = gen.encode(&mut tape, x, a, Bind::Frozen);
    let zr = tape.gather_rows(z, &parents);
    let noise = tape.constant(sample_noise(parents.len(), rng));
    let (xt, _) = gen.feature_head(&mut tape, zr, noise, false, Bind::Frozen);
    let heads = gen.pheno_head(&mut tape, xt, Bind::Frozen);
    let outputs: Vec<Matrix> = heads.iter().map(|&h| tape.value(h).clone()).collect();
    let phenotypes = decode_phenotypes(gen.fields(), &outputs, &PhenoScaler::fit(&g.phenotypes))?;
    attach(g, tape.value(xt).clone(), phenotypes, parents, cfg)
}

/// Appends generated nodes and their edges. With edge prediction each new
/// node keeps its `k'` strongest fused similarities to all other nodes plus
/// its parent; entries are symmetrized by `max` and self-loops added.
pub fn attach(
    g: &PopulationGraph,
    features: Matrix,
    phenotypes: PhenotypeTable,
    parents: Vec<usize>,
    cfg: &MergeConfig,
) -> Result<FusedGraph> {
    let n = g.node_count();
    let s = parents.len();
    let total = n + s;
    let reduced_new = g.projection.project(&features);
    let reduced = g.reduced.vstack(&reduced_new);
    let mut all_pheno = g.phenotypes.clone();
    all_pheno.append(&phenotypes)?;

    let mut adj = Matrix::zeros(total, total);
    for i in 0..n {
        adj.row_mut(i)[..n].copy_from_slice(g.adjacency.row(i));
    }
    let put = |adj: &mut Matrix, i: usize, j: usize, w: f64| {
        let v = adj.get(i, j).max(w);
        adj.set(i, j, v);
        adj.set(j, i, v);
    };
    let sigma = g.params.sigma;
    let gamma = g.params.gamma;
    for (t, &p) in parents.iter().enumerate() {
        let gi = n + t;
        if cfg.use_edge_prediction {
            let fused: Vec<f64> = (0..total)
                .map(|j| {
                    if j == gi {
                        0.0
                    } else {
                        kernel(reduced.row(gi), reduced.row(j), sigma)
                            * all_pheno.agreement(gi, &all_pheno, j, gamma)
                    }
                })
                .collect();
            for j in top_k_indices(&fused, gi, cfg.k_prime) {
                if fused[j] > 0.0 {
                    put(&mut adj, gi, j, fused[j]);
                }
            }
            let parent_w = if fused[p] > 0.0 {
                fused[p]
            } else {
                kernel(reduced.row(gi), reduced.row(p), sigma).max(1e-12)
            };
            put(&mut adj, gi, p, parent_w);
        } else {
            put(&mut adj, gi, p, 1.0);
        }
    }
    for gi in n..total {
        adj.set(gi, gi, adj.get(gi, gi) + 1.0);
    }

    let mut graph = g.clone();
    graph.features = g.features.vstack(&features);
    graph.reduced = reduced;
    graph.phenotypes = all_pheno;
    graph.adjacency = adj;
    graph.labels.extend(std::iter::repeat_n(0, s));
    graph.labeled.extend(std::iter::repeat_n(false, s));
    graph
        .provenance
        .extend(std::iter::repeat_n(Provenance::Generated, s));
    graph.node_ids.extend(std::iter::repeat_n(GENERATED_ID, s));
    Ok(FusedGraph {
        graph,
        base_count: n,
        parents,
    })
}

/// Baseline inpainting: the same node counts, but features drawn from
/// per-feature Gaussians fitted to the real nodes, phenotypes drawn at random
/// and edges to the parent plus `k'` uniformly chosen nodes with uniform
/// random weights.
pub fn random_merge<R: Rng + ?Sized>(
    g: &PopulationGraph,
    counts: &[usize],
    cfg: &MergeConfig,
    rng: &mut R,
) -> Result<FusedGraph> {
    let n = g.node_count();
    let parents: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
        .collect();
    if parents.is_empty() {
        return Ok(FusedGraph::unchanged(g));
    }
    let s = parents.len();
    let d = g.feature_dim();
    let means = g.features.column_means();
    let mut features = Matrix::zeros(s, d);
    for c in 0..d {
        let var = (0..n)
            .map(|r| (g.features.get(r, c) - means[c]).powi(2))
            .sum::<f64>()
            / n as f64;
        let dist = Normal::new(means[c], var.sqrt()).expect("finite std");
        for r in 0..s {
            features.set(r, c, dist.sample(rng));
        }
    }
    let phenotypes = random_phenotypes(g.phenotypes.fields(), &g.phenotypes, s, rng)?;

    let mut fused = attach(
        g,
        features,
        phenotypes,
        parents.clone(),
        &MergeConfig {
            use_edge_prediction: false,
            ..*cfg
        },
    )?;
    let total = n + s;
    let adj = &mut fused.graph.adjacency;
    for t in 0..s {
        let gi = n + t;
        let mut others: Vec<usize> = (0..total).filter(|&j| j != gi && j != parents[t]).collect();
        others.shuffle(rng);
        for &j in others.iter().take(cfg.k_prime) {
            let w: f64 = rng.random_range(0.0..1.0);
            let v = adj.get(gi, j).max(w);
            adj.set(gi, j, v);
            adj.set(j, gi, v);
        }
    }
    Ok(fused)
}

fn random_phenotypes<R: Rng + ?Sized>(
    fields: &[PhenotypeField],
    reference: &PhenotypeTable,
    rows: usize,
    rng: &mut R,
) -> Result<PhenotypeTable> {
    let columns = fields
        .iter()
        .zip(reference.columns())
        .map(|(f, col)| match (&f.kind, col) {
            (FieldKind::Categorical { levels }, _) => PhenoColumn::Categorical(
                (0..rows)
                    .map(|_| rng.random_range(0..levels.len() as u32))
                    .collect(),
            ),
            (FieldKind::Continuous, PhenoColumn::Continuous(v)) => {
                let n = v.len().max(1) as f64;
                let m = v.iter().sum::<f64>() / n;
                let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
                let dist = Normal::new(m, sd).expect("finite std");
                PhenoColumn::Continuous((0..rows).map(|_| dist.sample(rng)).collect())
            }
            (FieldKind::Continuous, PhenoColumn::Categorical(_)) => unreachable!("validated table"),
        })
        .collect();
    PhenotypeTable::new(fields.to_vec(), columns)
}
