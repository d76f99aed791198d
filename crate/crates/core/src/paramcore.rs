//! Flat parameter vectors exchanged between clients and the server.
//!
//! All arithmetic is done in `f64` and in a fixed term order so that two
//! calls with identical inputs are bit-identical.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Opaque architecture identifier. Two parameter vectors only combine when
/// their layouts agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayoutId(pub u64);

impl LayoutId {
    /// Hashes an architecture name and its dimensions into a layout id.
    pub fn from_dims(name: &str, dims: &[usize]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(name.as_bytes());
        for d in dims {
            hasher.update((*d as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        LayoutId(u64::from_le_bytes(digest[..8].try_into().unwrap()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: LayoutId,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: LayoutId, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: LayoutId, len: usize) -> Self {
        Self {
            layout,
            values: vec![0.0; len],
        }
    }

    pub fn filled(layout: LayoutId, len: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self {
            layout,
            values: vec![value; len],
        }
    }

    pub fn layout(&self) -> LayoutId {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn compatible(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch(format!(
                "layout {:016x} vs {:016x}",
                self.layout.0, other.layout.0
            )));
        }
        if self.values.len() != other.values.len() {
            return Err(Error::LayoutMismatch(format!(
                "length {} vs {}",
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(())
    }

    /// Applies `f` elementwise, rejecting non-finite results.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<ParamVector> {
        ParamVector::new(self.layout, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Combines two compatible vectors elementwise.
    pub fn zip_map(
        &self,
        other: &ParamVector,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Result<ParamVector> {
        self.compatible(other)?;
        ParamVector::new(
            self.layout,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Little-endian FSPV encoding: magic, version, layout hash, length, payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FSPV_HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(FSPV_MAGIC);
        out.push(FSPV_VERSION);
        out.extend_from_slice(&self.layout.0.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < FSPV_HEADER_LEN {
            return Err("truncated header".into());
        }
        if &bytes[..4] != FSPV_MAGIC {
            return Err("bad magic".into());
        }
        if bytes[4] != FSPV_VERSION {
            return Err(format!("unsupported version {}", bytes[4]));
        }
        let layout = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
        let len = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
        let payload = &bytes[FSPV_HEADER_LEN..];
        if payload.len() != len * 8 {
            return Err(format!(
                "payload has {} bytes, header says {} values",
                payload.len(),
                len
            ));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ParamVector::new(LayoutId(layout), values).map_err(|e| e.to_string())
    }

    pub fn write_fspv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_fspv(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::format(path, reason))
    }
}

pub const FSPV_MAGIC: &[u8; 4] = b"FSPV";
pub const FSPV_VERSION: u8 = 1;
const FSPV_HEADER_LEN: usize = 4 + 1 + 8 + 8;

/// `out[i] = Σ_k coeff_k · vec_k[i]`, accumulated left to right in term order.
pub fn linear_combine(terms: &[(f64, &ParamVector)]) -> Result<ParamVector> {
    let (_, first) = terms
        .first()
        .ok_or(Error::EmptyInput("linear_combine needs at least one term"))?;
    for (_, v) in &terms[1..] {
        first.compatible(v)?;
    }
    let mut out = vec![0.0; first.len()];
    for (coeff, v) in terms {
        for (o, x) in out.iter_mut().zip(v.values()) {
            *o += coeff * x;
        }
    }
    ParamVector::new(first.layout(), out)
}

/// Coordinate-wise median; an even count takes the mean of the two middle values.
pub fn coordinate_median(vectors: &[&ParamVector]) -> Result<ParamVector> {
    let first = vectors.first().ok_or(Error::EmptyInput(
        "coordinate_median needs at least one vector",
    ))?;
    for v in &vectors[1..] {
        first.compatible(v)?;
    }
    let k = vectors.len();
    let mut column = vec![0.0; k];
    let mut out = Vec::with_capacity(first.len());
    for i in 0..first.len() {
        for (slot, v) in column.iter_mut().zip(vectors) {
            *slot = v.values[i];
        }
        column.sort_by(f64::total_cmp);
        let m = if k % 2 == 1 {
            column[k / 2]
        } else {
            0.5 * (column[k / 2 - 1] + column[k / 2])
        };
        out.push(m);
    }
    ParamVector::new(first.layout(), out)
}

/// 64-bit digest of the layout and exact bit pattern of every value.
pub fn checksum(vector: &ParamVector) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(vector.layout.0.to_le_bytes());
    hasher.update((vector.values.len() as u64).to_le_bytes());
    for v in &vector.values {
        hasher.update(v.to_bits().to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
