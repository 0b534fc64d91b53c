//! How close generated neighbours are to the hidden ones, on held-out
//! masking episodes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graphcons::{normalize_adjacency, PopulationGraph};
use crate::inpaint::{greedy_match, sample_noise, slot_parents, Generator};
use crate::masking::{sample_episode, MaskConfig, MaskStrategy};
use crate::numerics::{Bind, Matrix, Tape};

/// Episodes drawn per client when scoring a generator.
pub const QUALITY_EPISODES: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorQuality {
    /// Fréchet distance between diagonal Gaussians fitted to generated and
    /// true hidden features.
    pub frechet: f64,
    /// Mean squared reconstruction error per hidden neighbour.
    pub rec_per_slot: f64,
    /// Mean squared error of the normalized missing-neighbour counts.
    pub count_mse: f64,
    pub slots: usize,
}

/// `Σ_j (μ_a − μ_b)² + (s_a − s_b)²` with per-column population std `s`;
/// the Fréchet distance of two Gaussians with diagonal covariance.
pub fn frechet_diagonal(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.cols(), b.cols(), "column mismatch");
    let moments = |m: &Matrix, c: usize| {
        let n = m.rows() as f64;
        let mean = (0..m.rows()).map(|r| m.get(r, c)).sum::<f64>() / n;
        let var = (0..m.rows())
            .map(|r| (m.get(r, c) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    };
    (0..a.cols())
        .map(|c| {
            let (ma, sa) = moments(a, c);
            let (mb, sb) = moments(b, c);
            (ma - mb).powi(2) + (sa - sb).powi(2)
        })
        .sum()
}

/// Scores one generator per graph, pooling generated and true rows over
/// every client and episode. Episodes always use leaf masking so that
/// different training variants face identical tests.
pub fn generator_quality<R: Rng + ?Sized>(
    pairs: &mut [(&PopulationGraph, &mut Generator)],
    mask: &MaskConfig,
    rng: &mut R,
) -> Result<GeneratorQuality> {
    let mask = MaskConfig {
        strategy: MaskStrategy::Bfs,
        ..*mask
    };
    let mut generated: Option<Matrix> = None;
    let mut truth: Option<Matrix> = None;
    let (mut count_se, mut count_n) = (0.0, 0usize);
    for (g, gen) in pairs.iter_mut() {
        if g.node_count() < 2 {
            continue;
        }
        for _ in 0..QUALITY_EPISODES {
            let ep = sample_episode(g, &mask, rng)?;
            let mut tape = Tape::new();
            let x = tape.constant(ep.corrupted.features.clone());
            let a = tape.constant(normalize_adjacency(&ep.corrupted.adjacency));
            let z = gen.encode(&mut tape, x, a, Bind::Frozen);
            let c = gen.count_head(&mut tape, z, Bind::Frozen);
            for (p, t) in tape.value(c).data().iter().zip(&ep.masked_count) {
                count_se += (p - t).powi(2);
                count_n += 1;
            }
            let parents = slot_parents(&ep);
            if parents.is_empty() {
                continue;
            }
            let zr = tape.gather_rows(z, &parents);
            let noise = tape.constant(sample_noise(parents.len(), rng));
            let (xt, _) = gen.feature_head(&mut tape, zr, noise, false, Bind::Frozen);
            let out = tape.value(xt).clone();
            let mut order = Vec::with_capacity(parents.len());
            let mut start = 0;
            for h in ep.hidden.iter().filter(|h| !h.is_empty()) {
                let slots: Vec<usize> = (start..start + h.len()).collect();
                let m = greedy_match(&out.select_rows(&slots), &ep.masked_features.select_rows(h));
                order.extend(m.into_iter().map(|t| h[t]));
                start += h.len();
            }
            let aligned = ep.masked_features.select_rows(&order);
            generated = Some(match generated {
                None => out,
                Some(g) => g.vstack(&out),
            });
            truth = Some(match truth {
                None => aligned,
                Some(t) => t.vstack(&aligned),
            });
        }
    }
    let count_mse = if count_n > 0 {
        count_se / count_n as f64
    } else {
        0.0
    };
    Ok(match (generated, truth) {
        (Some(g), Some(t)) => GeneratorQuality {
            frechet: frechet_diagonal(&g, &t),
            rec_per_slot: g.sub(&t).data().iter().map(|v| v * v).sum::<f64>() / g.rows() as f64,
            count_mse,
            slots: g.rows(),
        },
        _ => GeneratorQuality {
            count_mse,
            ..Default::default()
        },
    })
}
