//! Minimal binary tensor container for feature maps and depth distributions.
//!
//! ```text
//! magic    4 bytes "RTNS"
//! dtype    u32     1 = f32, 2 = f64, 3 = u8, 4 = i32
//! rank     u32
//! shape    rank × u64
//! payload  product(shape) elements, row-major, little-endian
//! ```
//! Values are exposed as `f64` regardless of the stored type.

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RTNS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
    I32,
}

impl DType {
    fn tag(self) -> u32 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
            DType::U8 => 3,
            DType::I32 => 4,
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            1 => DType::F32,
            2 => DType::F64,
            3 => DType::U8,
            4 => DType::I32,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterTensor {
    pub dtype: DType,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RasterTensor {
    pub fn new(dtype: DType, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if n != Some(data.len()) {
            return Err(Error::invalid_argument(format!(
                "tensor of shape {shape:?} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { dtype, shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Encodes the tensor; integer types round and saturate.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.shape.len() + self.data.len() * self.dtype.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.dtype.tag().to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            match self.dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                DType::U8 => out.push(v.round() as u8),
                DType::I32 => out.extend_from_slice(&(v.round() as i32).to_le_bytes()),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take = |at: usize, n: usize, what: &str| {
            bytes
                .get(at..at + n)
                .ok_or_else(|| Error::parse(at, format!("truncated while reading {what}")))
        };
        if take(0, 4, "magic")? != MAGIC {
            return Err(Error::parse(0, "bad magic, not a tensor file"));
        }
        let tag = u32::from_le_bytes(take(4, 4, "dtype")?.try_into().unwrap());
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::parse(4, format!("unknown dtype tag {tag}")))?;
        let rank = u32::from_le_bytes(take(8, 4, "rank")?.try_into().unwrap()) as usize;
        let mut pos = 12;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            let d = u64::from_le_bytes(take(pos, 8, "shape")?.try_into().unwrap());
            shape.push(usize::try_from(d).map_err(|_| Error::parse(pos, "dimension overflows"))?);
            pos += 8;
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::parse(12, "element count overflows"))?;
        let need = count
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::parse(12, "payload size overflows"))?;
        if bytes.len() - pos != need {
            return Err(Error::parse(
                pos,
                format!("payload holds {} bytes, shape {shape:?} needs {need}", bytes.len() - pos),
            ));
        }
        let payload = &bytes[pos..];
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::U8 => payload.iter().map(|&b| b as f64).collect(),
            DType::I32 => payload
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        Ok(Self { dtype, shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_types() {
        for dtype in [DType::F32, DType::F64, DType::U8, DType::I32] {
            let t = RasterTensor::new(dtype, vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
            assert_eq!(RasterTensor::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }

    #[test]
    fn rejects_bad_payload() {
        let t = RasterTensor::new(DType::F64, vec![2], vec![1.0, 2.0]).unwrap();
        let bytes = t.to_bytes();
        assert!(RasterTensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(RasterTensor::new(DType::F64, vec![3], vec![1.0]).is_err());
    }
}
