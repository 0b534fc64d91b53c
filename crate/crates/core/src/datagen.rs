//! Synthetic cohorts, client partitioning and the dataset container.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FedniError, Result};
use crate::graphcons::{
    FieldKind, GraphConfig, PhenoColumn, PhenotypeField, PhenotypeTable, PopulationGraph,
    Provenance, SigmaChoice,
};
use crate::numerics::Matrix;
use crate::wire::{put_f64s, put_string, put_u32, put_u64, Reader};

pub const MAGIC: &[u8; 4] = b"FNI1";
pub const FORMAT_VERSION: u8 = 1;
pub const DEFAULT_LABELED_RATE: f64 = 0.8;

/// Class-conditional phenotype model: a binary sex field and an age field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenoSpec {
    /// `P(sex = m | y)` for y = 0, 1.
    pub p_male: [f64; 2],
    /// Mean age for y = 0, 1.
    pub age_mean: [f64; 2],
    pub age_std: f64,
}

impl Default for PhenoSpec {
    fn default() -> Self {
        Self {
            p_male: [0.45, 0.55],
            age_mean: [70.0, 75.0],
            age_std: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n: usize,
    pub d: usize,
    /// Distance between the two class means in raw feature space.
    pub class_sep: f64,
    /// Fraction of subjects in class 1.
    pub label_balance: f64,
    pub labeled_rate: f64,
    pub pheno: PhenoSpec,
    pub graph: GraphConfig,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n: 500,
            d: 50,
            class_sep: 2.5,
            label_balance: 0.5,
            labeled_rate: DEFAULT_LABELED_RATE,
            pheno: PhenoSpec::default(),
            graph: GraphConfig::default(),
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FedniError::Parameter(m));
        if self.n < 2 || self.d == 0 {
            return bad(format!(
                "cohort needs n ≥ 2 and d ≥ 1, got n={} d={}",
                self.n, self.d
            ));
        }
        if !(self.class_sep >= 0.0 && self.class_sep.is_finite()) {
            return bad(format!(
                "class_sep must be finite and ≥ 0, got {}",
                self.class_sep
            ));
        }
        if !(self.label_balance > 0.0 && self.label_balance < 1.0) {
            return bad(format!(
                "label_balance must lie in (0, 1), got {}",
                self.label_balance
            ));
        }
        if !(self.labeled_rate > 0.0 && self.labeled_rate <= 1.0) {
            return bad(format!(
                "labeled_rate must lie in (0, 1], got {}",
                self.labeled_rate
            ));
        }
        let p = &self.pheno;
        if p.p_male.iter().any(|q| !(0.0..=1.0).contains(q)) || !(p.age_std > 0.0) {
            return bad(
                "phenotype probabilities must lie in [0, 1] and age_std be positive".into(),
            );
        }
        Ok(())
    }
}

pub fn default_fields() -> Vec<PhenotypeField> {
    vec![
        PhenotypeField::categorical("sex", &["f", "m"]),
        PhenotypeField::continuous("age"),
    ]
}

/// Draws a cohort: two unit-covariance Gaussians whose means sit
/// `class_sep` apart along a random direction, z-scored per feature, with
/// class-conditional sex and age, then builds its population graph.
pub fn generate_population(spec: &CohortSpec) -> Result<PopulationGraph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d) = (spec.n, spec.d);

    let positives = ((n as f64 * spec.label_balance).round() as usize).clamp(1, n - 1);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < positives)).collect();
    labels.shuffle(&mut rng);

    let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);

    let mut x = Matrix::zeros(n, d);
    for (i, &y) in labels.iter().enumerate() {
        let shift = if y == 1 { 0.5 } else { -0.5 } * spec.class_sep;
        for (c, u) in dir.iter().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            x.set(i, c, e + shift * u);
        }
    }
    zscore_columns(&mut x);

    let age = Normal::new(0.0, spec.pheno.age_std).expect("positive std");
    let sex: Vec<u32> = labels
        .iter()
        .map(|&y| u32::from(rng.random_bool(spec.pheno.p_male[y as usize])))
        .collect();
    let ages: Vec<f64> = labels
        .iter()
        .map(|&y| spec.pheno.age_mean[y as usize] + age.sample(&mut rng))
        .collect();
    let phenotypes = PhenotypeTable::new(
        default_fields(),
        vec![PhenoColumn::Categorical(sex), PhenoColumn::Continuous(ages)],
    )?;

    let n_labeled = ((n as f64 * spec.labeled_rate).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut labeled = vec![false; n];
    for &i in &order[..n_labeled] {
        labeled[i] = true;
    }
    PopulationGraph::build(x, phenotypes, labels, labeled, &spec.graph)
}

/// Per-column `(x − mean) / std` with the population std; constant columns
/// become zero.
pub fn zscore_columns(x: &mut Matrix) {
    let (n, d) = x.shape();
    let means = x.column_means();
    for c in 0..d {
        let var = (0..n)
            .map(|r| (x.get(r, c) - means[c]).powi(2))
            .sum::<f64>()
            / n as f64;
        let sd = var.sqrt();
        for r in 0..n {
            let v = if sd > 0.0 {
                (x.get(r, c) - means[c]) / sd
            } else {
                0.0
            };
            x.set(r, c, v);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    /// Each silo builds its own graph from its own subjects.
    Rebuild,
    /// Silos keep the global graph's edges among their subjects.
    Induced,
}

/// Splits subjects uniformly at random into `m` near-equal silos.
///
/// `shift` adds `shift · client / m` to every feature of each silo, a
/// heterogeneity knob that is zero for the homogeneous default.
pub fn partition_clients(
    g: &PopulationGraph,
    m: usize,
    seed: u64,
    mode: PartitionMode,
    config: &GraphConfig,
    shift: f64,
) -> Result<Vec<PopulationGraph>> {
    let n = g.node_count();
    if m == 0 {
        return Err(FedniError::Parameter("need at least one client".into()));
    }
    if n < 2 * m {
        return Err(FedniError::Parameter(format!(
            "{n} subjects cannot give {m} clients two subjects each"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    for c in 0..m {
        let size = n / m + usize::from(c < n % m);
        let mut idx = order[start..start + size].to_vec();
        idx.sort_unstable();
        start += size;
        let part = if shift == 0.0 {
            match mode {
                PartitionMode::Rebuild => g.rebuild(&idx, config)?,
                PartitionMode::Induced => g.induced(&idx),
            }
        } else {
            let mut base = g.induced(&idx);
            let delta = shift * c as f64 / m as f64;
            base.features = base.features.map(|v| v + delta);
            let mut rebuilt = PopulationGraph::build(
                base.features.clone(),
                base.phenotypes.clone(),
                base.labels.clone(),
                base.labeled.clone(),
                config,
            )?;
            rebuilt.node_ids = base.node_ids;
            if mode == PartitionMode::Induced {
                rebuilt.adjacency = base.adjacency;
            }
            rebuilt
        };
        out.push(part);
    }
    Ok(out)
}

/// Encodes a graph's subjects and construction parameters. Derived
/// quantities (reduced features, adjacency) are rebuilt on load.
pub fn encode_dataset(g: &PopulationGraph) -> Vec<u8> {
    let (n, d) = g.features.shape();
    let mut out = Vec::with_capacity(16 + n * d * 8);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    put_u64(&mut out, n as u64);
    put_u64(&mut out, d as u64);
    put_f64s(&mut out, g.features.data());

    put_u32(&mut out, g.phenotypes.fields().len() as u32);
    for (f, col) in g.phenotypes.fields().iter().zip(g.phenotypes.columns()) {
        match (&f.kind, col) {
            (FieldKind::Categorical { levels }, PhenoColumn::Categorical(v)) => {
                out.push(0);
                put_string(&mut out, &f.name);
                put_u32(&mut out, levels.len() as u32);
                for l in levels {
                    put_string(&mut out, l);
                }
                for &x in v {
                    put_u32(&mut out, x);
                }
            }
            (FieldKind::Continuous, PhenoColumn::Continuous(v)) => {
                out.push(1);
                put_string(&mut out, &f.name);
                put_f64s(&mut out, v);
            }
            _ => unreachable!("validated table"),
        }
    }

    out.extend_from_slice(&g.labels);

    let masks = [
        g.labeled.clone(),
        g.provenance
            .iter()
            .map(|p| *p == Provenance::Generated)
            .collect::<Vec<_>>(),
    ];
    put_u32(&mut out, masks.len() as u32);
    for mask in &masks {
        let mut bits = vec![0u8; n.div_ceil(8)];
        for (i, &b) in mask.iter().enumerate() {
            if b {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
    }

    put_u64(&mut out, g.params.k as u64);
    put_f64s(&mut out, &[g.params.sigma, g.params.gamma]);
    put_u64(&mut out, g.params.d_h as u64);
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<PopulationGraph> {
    let mut r = Reader::new(bytes, "dataset");
    let magic = r
        .take(4)
        .map_err(|_| FedniError::Format("file too short to be a dataset".into()))?;
    if magic != MAGIC {
        return Err(FedniError::Format(format!(
            "bad magic {magic:02x?}, expected \"FNI1\""
        )));
    }
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(FedniError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n = r.u64()? as usize;
    let d = r.u64()? as usize;
    let cells = n
        .checked_mul(d)
        .ok_or_else(|| FedniError::Format(format!("implausible shape {n}x{d}")))?;
    let features = Matrix::from_vec(n, d, r.f64s(cells)?)?;

    let q = r.u32()? as usize;
    let mut fields = Vec::with_capacity(q.min(64));
    let mut columns = Vec::with_capacity(q.min(64));
    for _ in 0..q {
        match r.u8()? {
            0 => {
                let name = r.string()?;
                let nl = r.u32()? as usize;
                let mut levels = Vec::with_capacity(nl.min(1024));
                for _ in 0..nl {
                    levels.push(r.string()?);
                }
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    v.push(r.u32()?);
                }
                fields.push(PhenotypeField {
                    name,
                    kind: FieldKind::Categorical { levels },
                });
                columns.push(PhenoColumn::Categorical(v));
            }
            1 => {
                let name = r.string()?;
                fields.push(PhenotypeField {
                    name,
                    kind: FieldKind::Continuous,
                });
                columns.push(PhenoColumn::Continuous(r.f64s(n)?));
            }
            t => {
                return Err(FedniError::Schema(format!(
                    "unknown phenotype field kind tag {t}"
                )))
            }
        }
    }
    let phenotypes = PhenotypeTable::new(fields, columns)?;

    let labels = r.take(n)?.to_vec();
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(FedniError::Schema(format!("label {bad} is not 0 or 1")));
    }
    let mask_count = r.u32()? as usize;
    if mask_count != 2 {
        return Err(FedniError::Schema(format!(
            "expected 2 node masks, found {mask_count}"
        )));
    }
    let mut masks = Vec::with_capacity(2);
    for _ in 0..mask_count {
        let bits = r.take(n.div_ceil(8))?;
        masks.push(
            (0..n)
                .map(|i| bits[i / 8] >> (i % 8) & 1 == 1)
                .collect::<Vec<bool>>(),
        );
    }
    let k = r.u64()? as usize;
    let sigma = r.f64()?;
    let gamma = r.f64()?;
    let d_h = r.u64()? as usize;
    r.finish()?;

    let config = GraphConfig {
        k,
        gamma,
        sigma: SigmaChoice::Fixed(sigma),
        d_h: Some(d_h),
    };
    let mut g = PopulationGraph::build(features, phenotypes, labels, masks[0].clone(), &config)?;
    g.provenance = masks[1]
        .iter()
        .map(|&b| {
            if b {
                Provenance::Generated
            } else {
                Provenance::Real
            }
        })
        .collect();
    Ok(g)
}

pub fn save_dataset(g: &PopulationGraph, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(g))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<PopulationGraph> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CohortSpec {
        CohortSpec {
            n: 40,
            d: 6,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = generate_population(&small()).unwrap();
        let b = generate_population(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labeled.iter().filter(|&&l| l).count(), 32);
        assert_eq!(a.labels.iter().filter(|&&y| y == 1).count(), 20);
    }

    #[test]
    fn features_are_zscored() {
        let g = generate_population(&small()).unwrap();
        for c in 0..6 {
            let col = g.features.column(c);
            let m = col.iter().sum::<f64>() / 40.0;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 40.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            CohortSpec { n: 1, ..small() },
            CohortSpec {
                class_sep: -1.0,
                ..small()
            },
            CohortSpec {
                label_balance: 1.0,
                ..small()
            },
        ] {
            assert!(matches!(
                generate_population(&spec),
                Err(FedniError::Parameter(_))
            ));
        }
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive() {
        let g = generate_population(&small()).unwrap();
        let parts = partition_clients(
            &g,
            3,
            5,
            PartitionMode::Rebuild,
            &GraphConfig::default(),
            0.0,
        )
        .unwrap();
        let sizes: Vec<usize> = parts.iter().map(|p| p.node_count()).collect();
        assert_eq!(sizes, vec![14, 13, 13]);
        let mut ids: Vec<usize> = parts.iter().flat_map(|p| p.node_ids.clone()).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..40).collect::<Vec<_>>());
        assert!(partition_clients(
            &g,
            21,
            5,
            PartitionMode::Rebuild,
            &GraphConfig::default(),
            0.0
        )
        .is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let g = generate_population(&small()).unwrap();
        let back = decode_dataset(&encode_dataset(&g)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_dataset(&generate_population(&small()).unwrap());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(FedniError::Format(_))));
        let mut old = bytes.clone();
        old[4] = 0;
        assert!(matches!(
            decode_dataset(&old),
            Err(FedniError::Version {
                found: 0,
                expected: 1
            })
        ));
        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() / 2]),
            Err(FedniError::Format(_))
        ));
    }
}
