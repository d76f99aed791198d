//! FSTN tensor files: magic `FSTN`, version byte, dtype code, rank byte,
//! `rank` little-endian u64 dims, then the little-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FSTN_MAGIC: &[u8; 4] = b"FSTN";
pub const FSTN_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    U8(Vec<u8>),
    U16(Vec<u16>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::F64(_) => 0,
            TensorData::U8(_) => 1,
            TensorData::U16(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U16(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {expected} elements, got {}",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::ShapeMismatch("rank exceeds 255".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FSTN_MAGIC);
        out.push(FSTN_VERSION);
        out.push(self.data.code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::U16(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 7 || &bytes[..4] != FSTN_MAGIC {
            return Err("bad magic".into());
        }
        if bytes[4] != FSTN_VERSION {
            return Err(format!("unsupported version {}", bytes[4]));
        }
        let code = bytes[5];
        let rank = bytes[6] as usize;
        let mut pos = 7;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let chunk = bytes.get(pos..pos + 8).ok_or("truncated dims")?;
            dims.push(u64::from_le_bytes(chunk.try_into().unwrap()) as usize);
            pos += 8;
        }
        let n: usize = dims.iter().product();
        let payload = &bytes[pos..];
        let width = match code {
            0 => 8,
            1 => 1,
            2 => 2,
            other => return Err(format!("unknown dtype code {other}")),
        };
        if payload.len() != n * width {
            return Err(format!(
                "payload {} bytes, expected {}",
                payload.len(),
                n * width
            ));
        }
        let data = match code {
            0 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => TensorData::U8(payload.to_vec()),
            _ => TensorData::U16(
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::format(path, reason))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_bit_exact() {
        let t = Tensor::new(vec![1, 2], TensorData::U16(vec![1, 258])).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[..4], b"FSTN");
        assert_eq!(b[4..7], [1, 2, 2]);
        assert_eq!(u64::from_le_bytes(b[7..15].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[15..23].try_into().unwrap()), 2);
        assert_eq!(&b[23..], &[1, 0, 2, 1]);
    }

    #[test]
    fn rejects_shape_and_payload_errors() {
        assert!(Tensor::new(vec![2, 2], TensorData::U8(vec![0; 3])).is_err());
        let mut b = Tensor::new(vec![2], TensorData::F64(vec![1.0, 2.0]))
            .unwrap()
            .to_bytes();
        b.pop();
        assert!(Tensor::from_bytes(&b).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::seeding::rng_from_seed(seed);
            let n = rows * cols;
            for data in [
                TensorData::F64((0..n).map(|_| rng.gen::<f64>()).collect()),
                TensorData::U8((0..n).map(|_| rng.gen()).collect()),
                TensorData::U16((0..n).map(|_| rng.gen()).collect()),
            ] {
                let t = Tensor::new(vec![rows, cols], data).unwrap();
                prop_assert_eq!(Tensor::from_bytes(&t.to_bytes()).unwrap(), t);
            }
        }
    }
}
