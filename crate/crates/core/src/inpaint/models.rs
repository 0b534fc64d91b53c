//! Missing-neighbour generator and the feature discriminator.

use rand::Rng;

use crate::error::{FedniError, Result};
use crate::graphcons::{FieldKind, PhenoColumn, PhenotypeField, PhenotypeTable};
use crate::numerics::{
    check_chain, Activation, BatchNorm, Bind, GraphConv, LayerKind, LayerSpec, Linear, Matrix,
    Module, ParamTensor, SnLinear, Tape, Var,
};

pub const ENCODER_HIDDEN: usize = 256;
pub const EMBED_DIM: usize = 64;
pub const NOISE_DIM: usize = 4;
pub const FEATURE_HIDDEN: [usize; 2] = [128, 256];
pub const PHENO_HIDDEN: usize = 32;
pub const DISC_HIDDEN: [usize; 2] = [128, 32];

/// Generator: GCN encoder, count head, noisy feature head and phenotype heads
/// reading the generated feature vector.
#[derive(Clone, Debug)]
pub struct Generator {
    pub enc1: GraphConv,
    pub enc2: GraphConv,
    pub count: Linear,
    pub feat1: Linear,
    pub bn1: BatchNorm,
    pub feat2: Linear,
    pub bn2: BatchNorm,
    pub feat_out: Linear,
    pub pheno_trunk: Linear,
    /// One head per phenotype field: `levels` logits or a single regression.
    pub pheno_heads: Vec<Linear>,
    fields: Vec<PhenotypeField>,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        fields: &[PhenotypeField],
        rng: &mut R,
    ) -> Self {
        let [h1, h2] = FEATURE_HIDDEN;
        let pheno_heads = fields
            .iter()
            .map(|f| Linear::new(PHENO_HIDDEN, f.level_count().unwrap_or(1), rng))
            .collect();
        Self {
            enc1: GraphConv::new(feature_dim, ENCODER_HIDDEN, Activation::Elu, rng),
            enc2: GraphConv::new(ENCODER_HIDDEN, EMBED_DIM, Activation::Elu, rng),
            count: Linear::new(EMBED_DIM, 1, rng),
            feat1: Linear::new(EMBED_DIM + NOISE_DIM, h1, rng),
            bn1: BatchNorm::new(h1),
            feat2: Linear::new(h1, h2, rng),
            bn2: BatchNorm::new(h2),
            feat_out: Linear::new(h2, feature_dim, rng),
            pheno_trunk: Linear::new(feature_dim, PHENO_HIDDEN, rng),
            pheno_heads,
            fields: fields.to_vec(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.enc1.in_dim()
    }

    pub fn fields(&self) -> &[PhenotypeField] {
        &self.fields
    }

    /// The layer table, for width checks.
    pub fn layer_specs(&self) -> Vec<Vec<LayerSpec>> {
        let d = self.feature_dim();
        let [h1, h2] = FEATURE_HIDDEN;
        vec![
            vec![
                LayerSpec::new(LayerKind::GraphConv, d, ENCODER_HIDDEN),
                LayerSpec::new(
                    LayerKind::GraphConv,
                    self.enc2.in_dim(),
                    self.enc2.out_dim(),
                ),
                LayerSpec::new(LayerKind::Linear, self.count.in_dim(), self.count.out_dim()),
            ],
            vec![
                LayerSpec::new(
                    LayerKind::ConcatNoise(NOISE_DIM),
                    EMBED_DIM,
                    EMBED_DIM + NOISE_DIM,
                ),
                LayerSpec::new(LayerKind::Linear, self.feat1.in_dim(), self.feat1.out_dim()),
                LayerSpec::new(LayerKind::BatchNorm, h1, h1),
                LayerSpec::new(LayerKind::Linear, self.feat2.in_dim(), self.feat2.out_dim()),
                LayerSpec::new(LayerKind::BatchNorm, h2, h2),
                LayerSpec::new(
                    LayerKind::Linear,
                    self.feat_out.in_dim(),
                    self.feat_out.out_dim(),
                ),
                LayerSpec::new(
                    LayerKind::Linear,
                    self.pheno_trunk.in_dim(),
                    self.pheno_trunk.out_dim(),
                ),
            ],
        ]
    }

    pub fn check(&self) -> Result<()> {
        for chain in self.layer_specs() {
            check_chain(&chain)?;
        }
        Ok(())
    }

    /// Node embeddings `Z` from features and a normalized adjacency.
    pub fn encode(&self, tape: &mut Tape, x: Var, a_norm: Var, bind: Bind) -> Var {
        let h = self.enc1.forward(tape, x, a_norm, bind);
        self.enc2.forward(tape, h, a_norm, bind)
    }

    /// Normalized missing-neighbour counts in `(0, 1)`.
    pub fn count_head(&self, tape: &mut Tape, z: Var, bind: Bind) -> Var {
        let c = self.count.forward(tape, z, bind);
        tape.sigmoid(c)
    }

    /// Features for each row of `z_rows`, one noise row each. Also reports
    /// whether batch normalization had to fall back to running statistics.
    pub fn feature_head(
        &mut self,
        tape: &mut Tape,
        z_rows: Var,
        noise: Var,
        training: bool,
        bind: Bind,
    ) -> (Var, bool) {
        let h = tape.concat_cols(z_rows, noise);
        let h = self.feat1.forward(tape, h, bind);
        let h = tape.relu(h);
        let (h, f1) = self.bn1.forward(tape, h, training, bind);
        let h = self.feat2.forward(tape, h, bind);
        let h = tape.relu(h);
        let (h, f2) = self.bn2.forward(tape, h, training, bind);
        let h = self.feat_out.forward(tape, h, bind);
        (tape.tanh(h), f1 || f2)
    }

    /// Per-field outputs: logits for categorical fields, a standardized
    /// value for continuous ones.
    pub fn pheno_head(&self, tape: &mut Tape, features: Var, bind: Bind) -> Vec<Var> {
        let t = self.pheno_trunk.forward(tape, features, bind);
        let t = tape.relu(t);
        self.pheno_heads
            .iter()
            .map(|h| h.forward(tape, t, bind))
            .collect()
    }
}

impl Module for Generator {
    fn state(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.enc1.push_state("gen.enc1", &mut out);
        self.enc2.push_state("gen.enc2", &mut out);
        self.count.push_state("gen.count", &mut out);
        self.feat1.push_state("gen.feat1", &mut out);
        self.bn1.push_state("gen.bn1", &mut out);
        self.feat2.push_state("gen.feat2", &mut out);
        self.bn2.push_state("gen.bn2", &mut out);
        self.feat_out.push_state("gen.feat_out", &mut out);
        self.pheno_trunk.push_state("gen.pheno_trunk", &mut out);
        for (h, f) in self.pheno_heads.iter().zip(&self.fields) {
            h.push_state(&format!("gen.pheno.{}", f.name), &mut out);
        }
        out
    }

    fn state_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        self.enc1.push_state_mut("gen.enc1", &mut out);
        self.enc2.push_state_mut("gen.enc2", &mut out);
        self.count.push_state_mut("gen.count", &mut out);
        self.feat1.push_state_mut("gen.feat1", &mut out);
        self.bn1.push_state_mut("gen.bn1", &mut out);
        self.feat2.push_state_mut("gen.feat2", &mut out);
        self.bn2.push_state_mut("gen.bn2", &mut out);
        self.feat_out.push_state_mut("gen.feat_out", &mut out);
        self.pheno_trunk.push_state_mut("gen.pheno_trunk", &mut out);
        for (h, f) in self.pheno_heads.iter_mut().zip(&self.fields) {
            h.push_state_mut(&format!("gen.pheno.{}", f.name), &mut out);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = Vec::new();
        self.enc1.push_params(&mut out);
        self.enc2.push_params(&mut out);
        self.count.push_params(&mut out);
        self.feat1.push_params(&mut out);
        self.bn1.push_params(&mut out);
        self.feat2.push_params(&mut out);
        self.bn2.push_params(&mut out);
        self.feat_out.push_params(&mut out);
        self.pheno_trunk.push_params(&mut out);
        for h in &mut self.pheno_heads {
            h.push_params(&mut out);
        }
        out
    }
}

/// Three spectrally normalized linear layers producing one raw score.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub layers: [SnLinear; 3],
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, rng: &mut R) -> Self {
        let [h1, h2] = DISC_HIDDEN;
        Self {
            layers: [
                SnLinear::new(feature_dim, h1, rng),
                SnLinear::new(h1, h2, rng),
                SnLinear::new(h2, 1, rng),
            ],
        }
    }

    /// Raw scores (before the sigmoid the losses apply).
    pub fn forward(&mut self, tape: &mut Tape, x: Var, bind: Bind, power_iters: usize) -> Var {
        let [l1, l2, l3] = &mut self.layers;
        let h = l1.forward(tape, x, bind, power_iters);
        let h = tape.relu(h);
        let h = l2.forward(tape, h, bind, power_iters);
        let h = tape.relu(h);
        l3.forward(tape, h, bind, power_iters)
    }
}

impl Module for Discriminator {
    fn state(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.push_state(&format!("disc.sn{}", i + 1), &mut out);
        }
        out
    }

    fn state_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.push_state_mut(&format!("disc.sn{}", i + 1), &mut out);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            l.push_params(&mut out);
        }
        out
    }
}

/// Client-local standardization of continuous phenotype fields. Kept out of
/// the model weights so no cohort statistic is ever uploaded.
#[derive(Clone, Debug, PartialEq)]
pub struct PhenoScaler {
    /// `(mean, std)` per field; `None` for categorical fields.
    pub stats: Vec<Option<(f64, f64)>>,
}

impl PhenoScaler {
    pub fn fit(table: &PhenotypeTable) -> Self {
        let stats = table
            .columns()
            .iter()
            .map(|c| match c {
                PhenoColumn::Categorical(_) => None,
                PhenoColumn::Continuous(v) => {
                    let n = v.len().max(1) as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let std = var.sqrt();
                    Some((mean, if std > 1e-9 { std } else { 1.0 }))
                }
            })
            .collect();
        Self { stats }
    }

    pub fn standardize(&self, field: usize, v: f64) -> f64 {
        let (m, s) = self.stats[field].expect("continuous field");
        (v - m) / s
    }

    pub fn restore(&self, field: usize, z: f64) -> f64 {
        let (m, s) = self.stats[field].expect("continuous field");
        m + z * s
    }
}

/// Converts per-field head outputs into a phenotype table (argmax for
/// categorical fields, de-standardized regression for continuous ones).
pub fn decode_phenotypes(
    fields: &[PhenotypeField],
    outputs: &[Matrix],
    scaler: &PhenoScaler,
) -> Result<PhenotypeTable> {
    if outputs.len() != fields.len() {
        return Err(FedniError::Dimension(format!(
            "{} phenotype heads for {} fields",
            outputs.len(),
            fields.len()
        )));
    }
    let columns = fields
        .iter()
        .zip(outputs)
        .enumerate()
        .map(|(q, (f, out))| match f.kind {
            FieldKind::Categorical { .. } => PhenoColumn::Categorical(
                (0..out.rows())
                    .map(|r| {
                        let row = out.row(r);
                        (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b }) as u32
                    })
                    .collect(),
            ),
            FieldKind::Continuous => PhenoColumn::Continuous(
                (0..out.rows())
                    .map(|r| scaler.restore(q, out.get(r, 0)))
                    .collect(),
            ),
        })
        .collect();
    PhenotypeTable::new(fields.to_vec(), columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fields() -> Vec<PhenotypeField> {
        vec![
            PhenotypeField::categorical("sex", &["f", "m"]),
            PhenotypeField::continuous("age"),
        ]
    }

    #[test]
    fn architecture_chains() {
        let g = Generator::new(12, &fields(), &mut ChaCha8Rng::seed_from_u64(0));
        g.check().unwrap();
        assert_eq!(g.pheno_heads[0].out_dim(), 2);
        assert_eq!(g.pheno_heads[1].out_dim(), 1);
        assert_eq!(g.feat1.in_dim(), 68);
    }

    #[test]
    fn fresh_count_head_is_half_at_zero_preactivation() {
        let mut g = Generator::new(3, &fields(), &mut ChaCha8Rng::seed_from_u64(1));
        g.count.weight.value.fill(0.0);
        let mut tape = Tape::new();
        let z = tape.constant(Matrix::filled(4, EMBED_DIM, 0.3));
        let c = g.count_head(&mut tape, z, Bind::Frozen);
        assert!(tape.value(c).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn equal_inputs_give_equal_features() {
        let mut g = Generator::new(5, &fields(), &mut ChaCha8Rng::seed_from_u64(2));
        let mut tape = Tape::new();
        let z = tape.constant(Matrix::filled(2, EMBED_DIM, 0.1));
        let noise = tape.constant(Matrix::zeros(2, NOISE_DIM));
        let (x, _) = g.feature_head(&mut tape, z, noise, false, Bind::Frozen);
        let x = tape.value(x);
        assert_eq!(x.row(0), x.row(1));
    }

    #[test]
    fn state_names_are_partitioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Generator::new(4, &fields(), &mut rng);
        let d = Discriminator::new(4, &mut rng);
        assert!(g.state().iter().all(|(n, _)| n.starts_with("gen.")));
        assert!(d.state().iter().all(|(n, _)| n.starts_with("disc.")));
        assert!(g.state().iter().any(|(n, _)| n == "gen.bn2.running_var"));
    }

    #[test]
    fn scaler_round_trip() {
        let t = PhenotypeTable::new(
            fields(),
            vec![
                PhenoColumn::Categorical(vec![0, 1, 1]),
                PhenoColumn::Continuous(vec![20.0, 30.0, 40.0]),
            ],
        )
        .unwrap();
        let s = PhenoScaler::fit(&t);
        assert_eq!(s.stats[0], None);
        assert!((s.restore(1, s.standardize(1, 33.0)) - 33.0).abs() < 1e-12);
        let decoded = decode_phenotypes(
            &fields(),
            &[
                Matrix::from_rows(&[vec![0.1, 0.9]]),
                Matrix::from_rows(&[vec![0.0]]),
            ],
            &s,
        )
        .unwrap();
        assert_eq!(decoded.columns()[0], PhenoColumn::Categorical(vec![1]));
        assert_eq!(decoded.columns()[1], PhenoColumn::Continuous(vec![30.0]));
    }
}
