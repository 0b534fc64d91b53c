//! Self-supervised corruption of a local graph: hide a small set of nodes
//! and remember, for every retained node, which neighbours went missing.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FedniError, Result};
use crate::graphcons::{neighbor_lists, PhenotypeTable, PopulationGraph};
use crate::numerics::Matrix;

pub const DEFAULT_TARGET_FRACTION: f64 = 0.125;
pub const DEFAULT_N_MAX: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    /// Deepest-first leaf removal along a BFS tree.
    Bfs,
    /// Uniform node removal, connectivity not preserved.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub target_fraction: f64,
    pub n_max: usize,
    pub strategy: MaskStrategy,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            target_fraction: DEFAULT_TARGET_FRACTION,
            n_max: DEFAULT_N_MAX,
            strategy: MaskStrategy::Bfs,
        }
    }
}

/// A corrupted graph plus exact ground truth for what was hidden.
#[derive(Clone, Debug)]
pub struct MaskEpisode {
    /// Induced subgraph on the retained nodes.
    pub corrupted: PopulationGraph,
    /// Source-graph index of every corrupted node, in corrupted order.
    pub retained: Vec<usize>,
    /// Source-graph index of every hidden node.
    pub masked: Vec<usize>,
    /// Features of the hidden nodes, one row per entry of `masked`.
    pub masked_features: Matrix,
    pub masked_phenotypes: PhenotypeTable,
    /// Per corrupted node, positions in `masked` of its hidden neighbours.
    pub hidden: Vec<Vec<usize>>,
    /// `|hidden_i| / n_max` clipped to `[0, 1]`.
    pub masked_count: Vec<f64>,
    pub root: Option<usize>,
    pub achieved_fraction: f64,
    /// Set when the target could not be met without disconnecting.
    pub short_of_target: bool,
}

impl MaskEpisode {
    pub fn hidden_total(&self) -> usize {
        self.hidden.iter().map(Vec::len).sum()
    }
}

/// BFS depth of each node from `root` over nonzero off-diagonal entries;
/// `None` marks nodes unreachable from the root.
pub fn bfs_depths(adjacency: &Matrix, root: usize) -> Vec<Option<usize>> {
    bfs_over(&neighbor_lists(adjacency), root, |_| true)
}

fn bfs_over(nbrs: &[Vec<usize>], root: usize, alive: impl Fn(usize) -> bool) -> Vec<Option<usize>> {
    let mut depth = vec![None; nbrs.len()];
    depth[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let dv = depth[v].unwrap();
        for &w in &nbrs[v] {
            if depth[w].is_none() && alive(w) {
                depth[w] = Some(dv + 1);
                queue.push_back(w);
            }
        }
    }
    depth
}

/// Smallest node count whose share of `n` reaches `fraction`.
pub fn target_count(n: usize, fraction: f64) -> usize {
    let raw = fraction * n as f64;
    // guard against 0.125 * 40 = 5.000000000000001
    (raw - 1e-9).ceil().max(0.0) as usize
}

/// Removes deepest BFS layers first (shuffled within a layer), skipping any
/// node whose removal would split the root's component.
pub fn mask_leaves<R: Rng + ?Sized>(
    g: &PopulationGraph,
    root: usize,
    target_fraction: f64,
    n_max: usize,
    rng: &mut R,
) -> Result<MaskEpisode> {
    let n = g.node_count();
    if root >= n {
        return Err(FedniError::Parameter(format!(
            "root {root} outside graph of {n} nodes"
        )));
    }
    if !(target_fraction > 0.0 && target_fraction < 0.5) {
        return Err(FedniError::Parameter(format!(
            "mask fraction must lie in (0, 0.5), got {target_fraction}"
        )));
    }
    let nbrs = neighbor_lists(&g.adjacency);
    let depth = bfs_over(&nbrs, root, |_| true);
    let reach = depth.iter().filter(|d| d.is_some()).count();
    let max_depth = depth.iter().flatten().copied().max().unwrap_or(0);

    let mut order = Vec::new();
    for layer in (1..=max_depth).rev() {
        let mut nodes: Vec<usize> = (0..n).filter(|&v| depth[v] == Some(layer)).collect();
        nodes.shuffle(rng);
        order.extend(nodes);
    }

    let want = target_count(n, target_fraction);
    let mut removed = vec![false; n];
    let mut component = reach;
    let mut masked = Vec::new();
    for v in order {
        if masked.len() == want {
            break;
        }
        removed[v] = true;
        let still = bfs_over(&nbrs, root, |w| !removed[w])
            .iter()
            .filter(|d| d.is_some())
            .count();
        if still + 1 == component {
            component = still;
            masked.push(v);
        } else {
            removed[v] = false;
        }
    }
    let short = masked.len() < want;
    Ok(assemble(g, &nbrs, masked, Some(root), n_max, short))
}

/// Uniformly random removal of the same number of nodes.
pub fn random_mask<R: Rng + ?Sized>(
    g: &PopulationGraph,
    target_fraction: f64,
    n_max: usize,
    rng: &mut R,
) -> Result<MaskEpisode> {
    if !(0.0..0.5).contains(&target_fraction) {
        return Err(FedniError::Parameter(format!(
            "mask fraction must lie in [0, 0.5), got {target_fraction}"
        )));
    }
    let n = g.node_count();
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    all.truncate(target_count(n, target_fraction));
    let nbrs = neighbor_lists(&g.adjacency);
    Ok(assemble(g, &nbrs, all, None, n_max, false))
}

/// Draws one training episode with a uniformly random root.
pub fn sample_episode<R: Rng + ?Sized>(
    g: &PopulationGraph,
    cfg: &MaskConfig,
    rng: &mut R,
) -> Result<MaskEpisode> {
    match cfg.strategy {
        MaskStrategy::Bfs => {
            let root = rng.random_range(0..g.node_count());
            mask_leaves(g, root, cfg.target_fraction, cfg.n_max, rng)
        }
        MaskStrategy::Random => random_mask(g, cfg.target_fraction, cfg.n_max, rng),
    }
}

fn assemble(
    g: &PopulationGraph,
    nbrs: &[Vec<usize>],
    mut masked: Vec<usize>,
    root: Option<usize>,
    n_max: usize,
    short: bool,
) -> MaskEpisode {
    let n = g.node_count();
    masked.sort_unstable();
    let mut slot = vec![usize::MAX; n];
    for (p, &v) in masked.iter().enumerate() {
        slot[v] = p;
    }
    let retained: Vec<usize> = (0..n).filter(|&v| slot[v] == usize::MAX).collect();
    let hidden: Vec<Vec<usize>> = retained
        .iter()
        .map(|&v| {
            nbrs[v]
                .iter()
                .filter(|&&w| slot[w] != usize::MAX)
                .map(|&w| slot[w])
                .collect()
        })
        .collect();
    let cap = n_max.max(1) as f64;
    let masked_count = hidden
        .iter()
        .map(|h| (h.len() as f64 / cap).min(1.0))
        .collect();
    MaskEpisode {
        corrupted: g.induced(&retained),
        masked_features: g.features.select_rows(&masked),
        masked_phenotypes: g.phenotypes.select(&masked),
        achieved_fraction: if n == 0 {
            0.0
        } else {
            masked.len() as f64 / n as f64
        },
        retained,
        masked,
        hidden,
        masked_count,
        root,
        short_of_target: short,
    }
}

/// Whether the nonzero off-diagonal structure of `a` is one component.
pub fn is_connected(a: &Matrix) -> bool {
    a.rows() == 0 || bfs_depths(a, 0).iter().all(Option::is_some)
}
