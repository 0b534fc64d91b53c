//! Client→server message passing with a schema audit.
//!
//! Only two payload kinds exist: model weights and named loss scalars. The
//! transport records a summary of every upload and can additionally watch
//! for registered raw-data rows ("canaries") appearing inside any payload.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::Matrix;

use super::weights::WeightVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Inpaint,
    Classify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    /// Messages move by value.
    InProcess,
    /// Weights are encoded to the wire format and decoded on arrival.
    Serialized,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Weights(WeightVector),
    Loss { label: String, value: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Upload {
    pub from: usize,
    pub round: usize,
    pub phase: Phase,
    pub payload: Payload,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Weights,
    Loss,
}

/// What the server saw, without the values themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub from: usize,
    pub round: usize,
    pub phase: Phase,
    pub kind: PayloadKind,
    /// Tensor names for weights, the label for losses.
    pub names: Vec<String>,
    pub bytes: usize,
    pub canary_hits: usize,
}

/// Which tensor-name prefixes each phase may upload.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditPolicy {
    pub allowed_prefixes: HashMap<Phase, Vec<String>>,
    pub allowed_losses: Vec<String>,
}

impl AuditPolicy {
    /// Generator weights in phase one, classifier weights in phase two.
    pub fn generator_only() -> Self {
        Self::new(&["gen."], &["clf."])
    }

    pub fn new(inpaint: &[&str], classify: &[&str]) -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            allowed_prefixes: HashMap::from([
                (Phase::Inpaint, own(inpaint)),
                (Phase::Classify, own(classify)),
            ]),
            allowed_losses: LOSS_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub const LOSS_LABELS: [&str; 3] = ["inpaint_loss", "train_loss", "global_loss"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub messages: usize,
    pub weight_messages: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug)]
pub struct Transport {
    mode: TransportMode,
    inbox: Vec<Upload>,
    records: Vec<AuditRecord>,
    canaries: HashMap<u64, Vec<Vec<f64>>>,
}

impl Transport {
    pub fn new(mode: TransportMode) -> Self {
        Self {
            mode,
            inbox: Vec::new(),
            records: Vec::new(),
            canaries: HashMap::new(),
        }
    }

    pub fn mode(&self) -> TransportMode {
        self.mode
    }

    /// Registers every row of `rows` as data that must never be uploaded.
    pub fn register_canaries(&mut self, rows: &Matrix) {
        for r in 0..rows.rows() {
            let row = rows.row(r).to_vec();
            if let Some(&first) = row.first() {
                self.canaries.entry(first.to_bits()).or_default().push(row);
            }
        }
    }

    fn canary_hits(&self, values: &[f64]) -> usize {
        if self.canaries.is_empty() {
            return 0;
        }
        let mut hits = 0;
        for (i, v) in values.iter().enumerate() {
            if let Some(rows) = self.canaries.get(&v.to_bits()) {
                hits += rows
                    .iter()
                    .filter(|row| {
                        values.len() - i >= row.len()
                            && values[i..i + row.len()]
                                .iter()
                                .zip(row.iter())
                                .all(|(a, b)| a.to_bits() == b.to_bits())
                    })
                    .count();
            }
        }
        hits
    }

    pub fn send(&mut self, mut msg: Upload) -> Result<()> {
        let (kind, names, bytes, hits) = match &mut msg.payload {
            Payload::Weights(w) => {
                let encoded = w.to_bytes();
                if self.mode == TransportMode::Serialized {
                    *w = WeightVector::from_bytes(&encoded)?;
                }
                let hits = self.canary_hits(&w.values);
                (
                    PayloadKind::Weights,
                    w.names().map(str::to_string).collect(),
                    encoded.len(),
                    hits,
                )
            }
            Payload::Loss { label, value } => {
                let hits = self.canary_hits(std::slice::from_ref(value));
                (PayloadKind::Loss, vec![label.clone()], 8, hits)
            }
        };
        self.records.push(AuditRecord {
            from: msg.from,
            round: msg.round,
            phase: msg.phase,
            kind,
            names,
            bytes,
            canary_hits: hits,
        });
        self.inbox.push(msg);
        Ok(())
    }

    /// Hands the server everything received since the last drain.
    pub fn drain(&mut self) -> Vec<Upload> {
        std::mem::take(&mut self.inbox)
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn audit(&self, policy: &AuditPolicy) -> AuditReport {
        let mut report = AuditReport {
            messages: self.records.len(),
            ..Default::default()
        };
        for r in &self.records {
            let at = format!("client {} round {} {:?}", r.from, r.round, r.phase);
            if r.canary_hits > 0 {
                report.violations.push(format!(
                    "{at}: payload contains {} raw data rows",
                    r.canary_hits
                ));
            }
            match r.kind {
                PayloadKind::Loss => {
                    if r.names.len() != 1 || !policy.allowed_losses.contains(&r.names[0]) {
                        report
                            .violations
                            .push(format!("{at}: unexpected scalar {:?}", r.names));
                    }
                }
                PayloadKind::Weights => {
                    report.weight_messages += 1;
                    let allowed = policy
                        .allowed_prefixes
                        .get(&r.phase)
                        .map(Vec::as_slice)
                        .unwrap_or(&[]);
                    for n in &r.names {
                        if !allowed.iter().any(|p| n.starts_with(p.as_str())) {
                            report
                                .violations
                                .push(format!("{at}: tensor '{n}' not permitted"));
                        }
                    }
                }
            }
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::weights::LayerEntry;

    fn weights(name: &str, values: Vec<f64>) -> Payload {
        Payload::Weights(WeightVector {
            manifest: vec![LayerEntry {
                name: name.into(),
                dims: vec![1, values.len()],
            }],
            values,
        })
    }

    #[test]
    fn discriminator_upload_is_flagged() {
        let mut t = Transport::new(TransportMode::InProcess);
        t.send(Upload {
            from: 0,
            round: 0,
            phase: Phase::Inpaint,
            payload: weights("gen.a", vec![1.0]),
        })
        .unwrap();
        assert!(t.audit(&AuditPolicy::generator_only()).is_clean());
        t.send(Upload {
            from: 1,
            round: 0,
            phase: Phase::Inpaint,
            payload: weights("disc.sn1.weight", vec![1.0]),
        })
        .unwrap();
        let report = t.audit(&AuditPolicy::generator_only());
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].contains("disc.sn1.weight"));
    }

    #[test]
    fn canary_rows_are_detected() {
        let mut t = Transport::new(TransportMode::Serialized);
        t.register_canaries(&Matrix::from_rows(&[vec![0.25, -1.5, 3.0]]));
        t.send(Upload {
            from: 2,
            round: 1,
            phase: Phase::Classify,
            payload: weights("clf.fc.weight", vec![9.0, 0.25, -1.5, 3.0, 4.0]),
        })
        .unwrap();
        let report = t.audit(&AuditPolicy::generator_only());
        assert!(!report.is_clean());
        assert_eq!(t.drain().len(), 1);
        assert!(t.drain().is_empty());
    }

    #[test]
    fn unknown_scalar_is_flagged() {
        let mut t = Transport::new(TransportMode::InProcess);
        t.send(Upload {
            from: 0,
            round: 0,
            phase: Phase::Classify,
            payload: Payload::Loss {
                label: "label_mean".into(),
                value: 0.4,
            },
        })
        .unwrap();
        assert!(!t.audit(&AuditPolicy::generator_only()).is_clean());
    }
}
