//! Population-graph construction.
//!
//! Raw subject features are reduced with PCA, compared through a Gaussian
//! kernel, fused (elementwise product) with a phenotype agreement count,
//! sparsified to the top-k neighbours per node, symmetrized with `max`, and
//! given unit self-loops.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FedniError, Result};
use crate::numerics::Matrix;

/// Default neighbourhood size for sparsification.
pub const DEFAULT_K: usize = 10;
/// Default age window for continuous phenotype agreement.
pub const DEFAULT_GAMMA: f64 = 2.0;
/// Upper bound on the default PCA width.
pub const DEFAULT_MAX_DH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FieldKind {
    /// Equality-compared field with a declared set of levels (e.g. sex).
    Categorical { levels: Vec<String> },
    /// Window-compared real field (e.g. age in years).
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeField {
    pub name: String,
    pub kind: FieldKind,
}

impl PhenotypeField {
    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: FieldKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: FieldKind::Continuous,
        }
    }

    pub fn level_count(&self) -> Option<usize> {
        match &self.kind {
            FieldKind::Categorical { levels } => Some(levels.len()),
            FieldKind::Continuous => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PhenoColumn {
    Categorical(Vec<u32>),
    Continuous(Vec<f64>),
}

impl PhenoColumn {
    pub fn len(&self) -> usize {
        match self {
            PhenoColumn::Categorical(v) => v.len(),
            PhenoColumn::Continuous(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Self {
        match self {
            PhenoColumn::Categorical(v) => {
                PhenoColumn::Categorical(idx.iter().map(|&i| v[i]).collect())
            }
            PhenoColumn::Continuous(v) => {
                PhenoColumn::Continuous(idx.iter().map(|&i| v[i]).collect())
            }
        }
    }
}

/// Typed phenotype columns, one value per node per field.
#[derive(Clone, Debug, PartialEq)]
pub struct PhenotypeTable {
    fields: Vec<PhenotypeField>,
    columns: Vec<PhenoColumn>,
}

impl PhenotypeTable {
    pub fn new(fields: Vec<PhenotypeField>, columns: Vec<PhenoColumn>) -> Result<Self> {
        if fields.len() != columns.len() {
            return Err(FedniError::Schema(format!(
                "{} fields declared but {} columns supplied",
                fields.len(),
                columns.len()
            )));
        }
        let n = columns.first().map_or(0, PhenoColumn::len);
        for (f, c) in fields.iter().zip(&columns) {
            if c.len() != n {
                return Err(FedniError::Schema(format!(
                    "column '{}' has {} rows, expected {n}",
                    f.name,
                    c.len()
                )));
            }
            match (&f.kind, c) {
                (FieldKind::Categorical { levels }, PhenoColumn::Categorical(v)) => {
                    if let Some(bad) = v.iter().find(|&&x| x as usize >= levels.len()) {
                        return Err(FedniError::Schema(format!(
                            "field '{}' has level {bad} outside its {} declared levels",
                            f.name,
                            levels.len()
                        )));
                    }
                }
                (FieldKind::Continuous, PhenoColumn::Continuous(v)) => {
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(FedniError::Schema(format!(
                            "field '{}' holds a non-finite value",
                            f.name
                        )));
                    }
                }
                _ => {
                    return Err(FedniError::Schema(format!(
                        "field '{}' declared {:?} but column has the other kind",
                        f.name, f.kind
                    )))
                }
            }
        }
        Ok(Self { fields, columns })
    }

    /// A table with no fields for `n` nodes is not representable; callers use
    /// at least one field. This returns an empty-schema table of zero rows.
    pub fn empty_like(&self) -> Self {
        Self {
            fields: self.fields.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| match c {
                    PhenoColumn::Categorical(_) => PhenoColumn::Categorical(Vec::new()),
                    PhenoColumn::Continuous(_) => PhenoColumn::Continuous(Vec::new()),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, PhenoColumn::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fields(&self) -> &[PhenotypeField] {
        &self.fields
    }

    pub fn columns(&self) -> &[PhenoColumn] {
        &self.columns
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            fields: self.fields.clone(),
            columns: self.columns.iter().map(|c| c.select(idx)).collect(),
        }
    }

    /// Appends the rows of `other`, which must share this schema.
    pub fn append(&mut self, other: &PhenotypeTable) -> Result<()> {
        if self.fields != other.fields {
            return Err(FedniError::Schema(
                "appending a table with a different schema".into(),
            ));
        }
        for (a, b) in self.columns.iter_mut().zip(&other.columns) {
            match (a, b) {
                (PhenoColumn::Categorical(a), PhenoColumn::Categorical(b)) => {
                    a.extend_from_slice(b)
                }
                (PhenoColumn::Continuous(a), PhenoColumn::Continuous(b)) => a.extend_from_slice(b),
                _ => unreachable!("schema equality implies kinds agree"),
            }
        }
        Ok(())
    }

    /// Number of fields on which row `i` of `self` and row `j` of `other`
    /// agree (equality for categorical, `|Δ| ≤ gamma` for continuous).
    pub fn agreement(&self, i: usize, other: &PhenotypeTable, j: usize, gamma: f64) -> f64 {
        let mut s = 0.0;
        for (a, b) in self.columns.iter().zip(&other.columns) {
            let hit = match (a, b) {
                (PhenoColumn::Categorical(a), PhenoColumn::Categorical(b)) => a[i] == b[j],
                (PhenoColumn::Continuous(a), PhenoColumn::Continuous(b)) => {
                    (a[i] - b[j]).abs() <= gamma
                }
                _ => false,
            };
            if hit {
                s += 1.0;
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Generated,
}

/// Kernel width choice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SigmaChoice {
    /// Mean pairwise Euclidean distance of the reduced features.
    MeanDistance,
    Fixed(f64),
}

/// Knobs of the construction pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub k: usize,
    pub gamma: f64,
    pub sigma: SigmaChoice,
    /// PCA width; `None` means `min(64, n, d)`.
    pub d_h: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            gamma: DEFAULT_GAMMA,
            sigma: SigmaChoice::MeanDistance,
            d_h: None,
        }
    }
}

/// The parameters a graph was actually built with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub k: usize,
    pub sigma: f64,
    pub gamma: f64,
    pub d_h: usize,
}

/// PCA projection retained for mapping new (generated) feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// `d x d_h`, columns are principal directions.
    pub basis: Matrix,
}

impl Projection {
    pub fn project(&self, x: &Matrix) -> Matrix {
        let mut centered = x.clone();
        for r in 0..centered.rows() {
            for (v, m) in centered.row_mut(r).iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        centered.matmul(&self.basis)
    }
}

/// Subjects, their phenotypes and the fused similarity graph over them.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationGraph {
    pub features: Matrix,
    pub reduced: Matrix,
    pub phenotypes: PhenotypeTable,
    /// Fused weighted adjacency including self-loops.
    pub adjacency: Matrix,
    pub labels: Vec<u8>,
    pub labeled: Vec<bool>,
    pub provenance: Vec<Provenance>,
    /// Identifiers in the originating cohort; stable across partitioning.
    pub node_ids: Vec<usize>,
    pub params: GraphParams,
    pub projection: Projection,
}

impl PopulationGraph {
    /// Runs the full construction pipeline.
    pub fn build(
        features: Matrix,
        phenotypes: PhenotypeTable,
        labels: Vec<u8>,
        labeled: Vec<bool>,
        config: &GraphConfig,
    ) -> Result<Self> {
        let n = features.rows();
        if phenotypes.len() != n || labels.len() != n || labeled.len() != n {
            return Err(FedniError::Dimension(format!(
                "{n} feature rows but {} phenotype rows, {} labels, {} mask entries",
                phenotypes.len(),
                labels.len(),
                labeled.len()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(FedniError::Parameter("labels must be 0 or 1".into()));
        }
        if n == 0 {
            return Err(FedniError::Parameter(
                "cannot build a graph with no nodes".into(),
            ));
        }
        let d_h = config
            .d_h
            .unwrap_or_else(|| DEFAULT_MAX_DH.min(n).min(features.cols()));
        let pca = pca_reduce(&features, d_h)?;
        let sigma = match config.sigma {
            SigmaChoice::Fixed(s) => s,
            SigmaChoice::MeanDistance => {
                let s = mean_pairwise_distance(&pca.reduced);
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            }
        };
        let s = feature_similarity(&pca.reduced, sigma)?;
        let s_tilde = phenotype_similarity(&phenotypes, config.gamma)?;
        let adjacency = build_adjacency(&s, &s_tilde, config.k)?.adjacency;
        Ok(Self {
            features,
            reduced: pca.reduced,
            phenotypes,
            adjacency,
            labels,
            labeled,
            provenance: vec![Provenance::Real; n],
            node_ids: (0..n).collect(),
            params: GraphParams {
                k: config.k,
                sigma,
                gamma: config.gamma,
                d_h,
            },
            projection: Projection {
                mean: pca.mean,
                basis: pca.basis,
            },
        })
    }

    /// The construction settings that reproduce this graph.
    pub fn config(&self) -> GraphConfig {
        GraphConfig {
            k: self.params.k,
            gamma: self.params.gamma,
            sigma: SigmaChoice::Fixed(self.params.sigma),
            d_h: Some(self.params.d_h),
        }
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn normalized_adjacency(&self) -> Matrix {
        normalize_adjacency(&self.adjacency)
    }

    /// Unweighted neighbour lists over nonzero off-diagonal entries.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        neighbor_lists(&self.adjacency)
    }

    /// Subgraph on `idx` keeping the existing edge weights.
    pub fn induced(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            reduced: self.reduced.select_rows(idx),
            phenotypes: self.phenotypes.select(idx),
            adjacency: self.adjacency.select_square(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            labeled: idx.iter().map(|&i| self.labeled[i]).collect(),
            provenance: idx.iter().map(|&i| self.provenance[i]).collect(),
            node_ids: idx.iter().map(|&i| self.node_ids[i]).collect(),
            params: self.params,
            projection: self.projection.clone(),
        }
    }

    /// Graph over the nodes `idx` constructed from scratch, as a silo holding
    /// only those subjects would.
    pub fn rebuild(&self, idx: &[usize], config: &GraphConfig) -> Result<Self> {
        let mut g = Self::build(
            self.features.select_rows(idx),
            self.phenotypes.select(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
            idx.iter().map(|&i| self.labeled[i]).collect(),
            config,
        )?;
        g.node_ids = idx.iter().map(|&i| self.node_ids[i]).collect();
        g.provenance = idx.iter().map(|&i| self.provenance[i]).collect();
        Ok(g)
    }
}

/// Output of [`pca_reduce`].
#[derive(Clone, Debug)]
pub struct Pca {
    pub reduced: Matrix,
    pub basis: Matrix,
    pub mean: Vec<f64>,
    /// All covariance eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
}

/// Projects `x` onto its top `d_h` principal directions.
///
/// Columns of the basis are ordered by descending eigenvalue of the sample
/// covariance, with each column's largest-magnitude entry made positive.
pub fn pca_reduce(x: &Matrix, d_h: usize) -> Result<Pca> {
    let (n, d) = x.shape();
    let achievable = n.min(d);
    if d_h == 0 || d_h > achievable {
        return Err(FedniError::Parameter(format!(
            "requested {d_h} components but at most {achievable} are achievable for {n}x{d} data"
        )));
    }
    let mean = x.column_means();
    let mut centered = x.clone();
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.t_matmul(&centered).scale(1.0 / denom);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.data()));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });
    let mut basis = Matrix::zeros(d, d_h);
    for (c, &k) in order.iter().take(d_h).enumerate() {
        let col = eig.eigenvectors.column(k);
        let pivot = (0..d)
            .max_by(|&a, &b| {
                col[a]
                    .abs()
                    .partial_cmp(&col[b].abs())
                    .unwrap()
                    .then(b.cmp(&a))
            })
            .unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            basis.set(r, c, sign * col[r]);
        }
    }
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    Ok(Pca {
        reduced: centered.matmul(&basis),
        basis,
        mean,
        eigenvalues,
    })
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean Euclidean distance over unordered node pairs (0 for fewer than two).
pub fn mean_pairwise_distance(h: &Matrix) -> f64 {
    let n = h.rows();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += squared_distance(h.row(i), h.row(j)).sqrt();
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// `s_ij = exp(-‖h_i - h_j‖² / 2σ²)`.
pub fn feature_similarity(h: &Matrix, sigma: f64) -> Result<Matrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(FedniError::Parameter(format!(
            "kernel width must be positive, got {sigma}"
        )));
    }
    let n = h.rows();
    let denom = 2.0 * sigma * sigma;
    let mut s = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let v = (-squared_distance(h.row(i), h.row(j)) / denom).exp();
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    Ok(s)
}

/// Gaussian kernel between two reduced feature vectors.
pub fn kernel(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    (-squared_distance(a, b) / (2.0 * sigma * sigma)).exp()
}

/// Count of agreeing phenotype fields for every node pair.
pub fn phenotype_similarity(u: &PhenotypeTable, gamma: f64) -> Result<Matrix> {
    let has_continuous = u.fields().iter().any(|f| f.kind == FieldKind::Continuous);
    if has_continuous && !(gamma > 0.0) {
        return Err(FedniError::Parameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let n = u.len();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = u.agreement(i, u, j, gamma);
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    Ok(s)
}

/// Output of [`build_adjacency`].
#[derive(Clone, Debug)]
pub struct AdjacencyBuild {
    pub adjacency: Matrix,
    /// Set when `k ≥ n`, so every off-diagonal entry was kept.
    pub kept_all: bool,
}

/// Indices of the `k` largest entries of `weights`, skipping `skip`, with
/// ties going to the lower index.
pub fn top_k_indices(weights: &[f64], skip: usize, k: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..weights.len()).filter(|&j| j != skip).collect();
    cand.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .expect("finite weights")
            .then(a.cmp(&b))
    });
    cand.truncate(k);
    cand
}

/// Hadamard fusion, per-row top-k, `max` symmetrization and `+ I`.
pub fn build_adjacency(s: &Matrix, s_tilde: &Matrix, k: usize) -> Result<AdjacencyBuild> {
    if s.shape() != s_tilde.shape() || s.rows() != s.cols() {
        return Err(FedniError::Dimension(format!(
            "similarity matrices {:?} and {:?} must be equal and square",
            s.shape(),
            s_tilde.shape()
        )));
    }
    if k == 0 {
        return Err(FedniError::Parameter("k must be at least 1".into()));
    }
    let n = s.rows();
    let fused = s.hadamard(s_tilde);
    let mut sparse = Matrix::zeros(n, n);
    for i in 0..n {
        for j in top_k_indices(fused.row(i), i, k) {
            sparse.set(i, j, fused.get(i, j));
        }
    }
    let mut a = sparse.zip_map(&sparse.transpose(), f64::max);
    for i in 0..n {
        a.set(i, i, a.get(i, i) + 1.0);
    }
    Ok(AdjacencyBuild {
        adjacency: a,
        kept_all: k + 1 >= n,
    })
}

/// `D^{-1/2} A D^{-1/2}` with degrees taken as row sums of `A`.
pub fn normalize_adjacency(a: &Matrix) -> Matrix {
    let n = a.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut out = a.clone();
    for i in 0..n {
        for j in 0..n {
            let v = out.get(i, j);
            if v != 0.0 {
                out.set(i, j, v * inv_sqrt[i] * inv_sqrt[j]);
            }
        }
    }
    out
}

pub fn neighbor_lists(a: &Matrix) -> Vec<Vec<usize>> {
    (0..a.rows())
        .map(|i| {
            (0..a.cols())
                .filter(|&j| j != i && a.get(i, j) != 0.0)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sex_age(sex: &[u32], age: &[f64]) -> PhenotypeTable {
        PhenotypeTable::new(
            vec![
                PhenotypeField::categorical("sex", &["f", "m"]),
                PhenotypeField::continuous("age"),
            ],
            vec![
                PhenoColumn::Categorical(sex.to_vec()),
                PhenoColumn::Continuous(age.to_vec()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identical_rows_reduce_to_zero() {
        let x = Matrix::from_rows(&vec![vec![1.0, 2.0, 3.0]; 4]);
        let pca = pca_reduce(&x, 2).unwrap();
        assert!(pca.reduced.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn first_component_of_diagonal_line() {
        let x = Matrix::from_rows(&(0..6).map(|i| vec![i as f64, i as f64]).collect::<Vec<_>>());
        let pca = pca_reduce(&x, 1).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((pca.basis.get(0, 0) - s).abs() < 1e-6);
        assert!((pca.basis.get(1, 0) - s).abs() < 1e-6);
    }

    #[test]
    fn too_many_components_lists_achievable() {
        let x = Matrix::zeros(3, 5);
        let err = pca_reduce(&x, 4).unwrap_err().to_string();
        assert!(err.contains("at most 3"), "{err}");
    }

    #[test]
    fn kernel_values() {
        let h = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![2.0, 0.0]]);
        // ‖h0 - h2‖² = 4 = 2σ² with σ = √2
        let s = feature_similarity(&h, 2f64.sqrt()).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
        assert!((s.get(0, 2) - (-1.0f64).exp()).abs() < 1e-6);
        assert!(s.is_symmetric(0.0));
        assert!(matches!(
            feature_similarity(&h, 0.0),
            Err(FedniError::Parameter(_))
        ));
    }

    #[test]
    fn phenotype_agreement_counts() {
        let u = sex_age(&[0, 0, 1], &[30.0, 31.0, 40.0]);
        let s = phenotype_similarity(&u, 2.0).unwrap();
        assert_eq!(s.get(0, 1), 2.0);
        assert_eq!(s.get(0, 2), 0.0);
        assert_eq!(s.get(2, 2), 2.0);
    }

    #[test]
    fn schema_violations_are_rejected() {
        let bad_kind = PhenotypeTable::new(
            vec![PhenotypeField::continuous("age")],
            vec![PhenoColumn::Categorical(vec![0])],
        );
        assert!(matches!(bad_kind, Err(FedniError::Schema(_))));
        let bad_level = PhenotypeTable::new(
            vec![PhenotypeField::categorical("sex", &["f", "m"])],
            vec![PhenoColumn::Categorical(vec![2])],
        );
        assert!(matches!(bad_level, Err(FedniError::Schema(_))));
    }

    #[test]
    fn annihilating_phenotypes_give_identity() {
        let s = Matrix::filled(4, 4, 1.0);
        let st = Matrix::zeros(4, 4);
        let a = build_adjacency(&s, &st, 2).unwrap().adjacency;
        assert_eq!(a, Matrix::identity(4));
    }

    #[test]
    fn top_one_keeps_strongest_edge() {
        let s = Matrix::from_rows(&[
            vec![1.0, 0.9, 0.1],
            vec![0.9, 1.0, 0.0],
            vec![0.1, 0.0, 1.0],
        ]);
        let st = Matrix::filled(3, 3, 1.0);
        let a = build_adjacency(&s, &st, 1).unwrap().adjacency;
        assert_eq!(a.get(0, 1), 0.9);
        // node 2's best edge is to node 0, kept through symmetrization
        assert_eq!(a.get(0, 2), 0.1);
        assert_eq!(a.get(1, 2), 0.0);
        assert_eq!(a.get(0, 0), 1.0);
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(top_k_indices(&[0.5, 0.5, 0.5, 0.9], 0, 2), vec![3, 1]);
    }

    #[test]
    fn large_k_keeps_everything_and_warns() {
        let s = Matrix::filled(3, 3, 0.5);
        let st = Matrix::filled(3, 3, 1.0);
        let out = build_adjacency(&s, &st, 5).unwrap();
        assert!(out.kept_all);
        assert_eq!(out.adjacency.get(0, 2), 0.5);
    }

    #[test]
    fn normalization_of_two_node_clique() {
        let a = Matrix::filled(2, 2, 1.0);
        assert!(normalize_adjacency(&a).max_abs_diff(&Matrix::filled(2, 2, 0.5)) < 1e-15);
    }

    #[test]
    fn build_pipeline_invariants() {
        let n = 12;
        let x = Matrix::from_vec(
            n,
            4,
            (0..n * 4).map(|i| ((i * 37 % 17) as f64).sin()).collect(),
        )
        .unwrap();
        let sex: Vec<u32> = (0..n as u32).map(|i| i % 2).collect();
        let age: Vec<f64> = (0..n).map(|i| 20.0 + i as f64).collect();
        let g = PopulationGraph::build(
            x,
            sex_age(&sex, &age),
            vec![0; n],
            vec![true; n],
            &GraphConfig {
                k: 3,
                ..GraphConfig::default()
            },
        )
        .unwrap();
        assert!(g.adjacency.is_symmetric(0.0));
        for i in 0..n {
            assert!(g.adjacency.get(i, i) >= 1.0);
        }
        assert!(g.adjacency.data().iter().all(|&v| v >= 0.0));
        assert_eq!(g.params.d_h, 4);
    }
}
