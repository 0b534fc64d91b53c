//! Flat model weights with a shape manifest, averaging and DP noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{FedniError, Result};
use crate::numerics::Module;
use crate::wire::{put_f64s, put_string, put_u32, put_u64, Reader};

pub const WIRE_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerEntry {
    pub name: String,
    pub dims: Vec<usize>,
}

impl LayerEntry {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every tensor of a model, concatenated in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    pub manifest: Vec<LayerEntry>,
    pub values: Vec<f64>,
}

impl WeightVector {
    pub fn pack<M: Module + ?Sized>(model: &M) -> Self {
        let mut manifest = Vec::new();
        let mut values = Vec::new();
        for (name, m) in model.state() {
            manifest.push(LayerEntry {
                name,
                dims: vec![m.rows(), m.cols()],
            });
            values.extend_from_slice(m.data());
        }
        Self { manifest, values }
    }

    /// Copies the values into `model`, whose manifest must match exactly.
    pub fn unpack_into<M: Module + ?Sized>(&self, model: &mut M) -> Result<()> {
        let mut state = model.state_mut();
        if state.len() != self.manifest.len() {
            return Err(FedniError::Dimension(format!(
                "model has {} tensors, weight vector {}",
                state.len(),
                self.manifest.len()
            )));
        }
        let mut offset = 0;
        for ((name, m), entry) in state.iter_mut().zip(&self.manifest) {
            if *name != entry.name || entry.dims != [m.rows(), m.cols()] {
                return Err(FedniError::Dimension(format!(
                    "tensor '{name}' {:?} does not match manifest entry '{}' {:?}",
                    m.shape(),
                    entry.name,
                    entry.dims
                )));
            }
            let len = entry.len();
            m.data_mut()
                .copy_from_slice(&self.values[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.manifest.iter().map(|e| e.name.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.values.len() * 8);
        out.push(WIRE_VERSION);
        put_u32(&mut out, self.manifest.len() as u32);
        for e in &self.manifest {
            put_string(&mut out, &e.name);
            put_u32(&mut out, e.dims.len() as u32);
            for &d in &e.dims {
                put_u64(&mut out, d as u64);
            }
        }
        put_f64s(&mut out, &self.values);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "weight vector");
        let version = r.u8()?;
        if version != WIRE_VERSION {
            return Err(FedniError::Version {
                found: version,
                expected: WIRE_VERSION,
            });
        }
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        let mut total = 0usize;
        for _ in 0..count {
            let name = r.string()?;
            let nd = r.u32()? as usize;
            let mut dims = Vec::with_capacity(nd.min(8));
            for _ in 0..nd {
                dims.push(r.u64()? as usize);
            }
            let entry = LayerEntry { name, dims };
            total = total
                .checked_add(entry.len())
                .ok_or_else(|| FedniError::Format("manifest size overflows".into()))?;
            manifest.push(entry);
        }
        let values = r.f64s(total)?;
        r.finish()?;
        Ok(Self { manifest, values })
    }
}

/// Unweighted mean computed as `w₀ + Σ_m (w_m − w₀)/M`, folded left in
/// client order, so identical uploads reproduce `w₀` bit for bit.
pub fn fedavg_aggregate(weights: &[WeightVector]) -> Result<WeightVector> {
    let first = weights
        .first()
        .ok_or_else(|| FedniError::Parameter("nothing to aggregate".into()))?;
    for (m, w) in weights.iter().enumerate().skip(1) {
        if w.manifest != first.manifest {
            let reason = first
                .manifest
                .iter()
                .zip(&w.manifest)
                .find(|(a, b)| a != b)
                .map(|(a, b)| {
                    format!(
                        "expected {} {:?}, got {} {:?}",
                        a.name, a.dims, b.name, b.dims
                    )
                })
                .unwrap_or_else(|| {
                    format!(
                        "expected {} tensors, got {}",
                        first.manifest.len(),
                        w.manifest.len()
                    )
                });
            return Err(FedniError::Protocol { client: m, reason });
        }
    }
    let inv = weights.len() as f64;
    let mut values = first.values.clone();
    for w in weights {
        for ((acc, &v), &base) in values.iter_mut().zip(&w.values).zip(&first.values) {
            *acc += (v - base) / inv;
        }
    }
    Ok(WeightVector {
        manifest: first.manifest.clone(),
        values,
    })
}

/// Adds `N(0, σ²)` to every element. `σ = 0` returns an exact copy without
/// drawing from `rng`.
pub fn dp_perturb<R: Rng + ?Sized>(
    w: &WeightVector,
    sigma: f64,
    rng: &mut R,
) -> Result<WeightVector> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(FedniError::Parameter(format!(
            "DP noise std must be ≥ 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(w.clone());
    }
    let dist = Normal::new(0.0, sigma).expect("valid std");
    Ok(WeightVector {
        manifest: w.manifest.clone(),
        values: w.values.iter().map(|v| v + dist.sample(rng)).collect(),
    })
}
