//! Bit-exact tensor file format.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "FATN"
//! 4       4           version, u32 = 1
//! 8       1           dtype, u8 (1 = float32, 2 = float64)
//! 9       4           rank, u32
//! 13      8·rank      dims, u64 each
//! ...     numel·size  row-major payload
//! ```
//!
//! Every integer and float is little-endian. A matrix is stored with rank 2
//! `[rows, cols]`, a feature map with rank 3 `[C, H, W]`.

use std::fs;
use std::path::Path;

use super::feature_map::FeatureMap;
use super::matrix::Matrix;
use super::real::{Dtype, Real};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FATN";
pub const FORMAT_VERSION: u32 = 1;

const FIXED_HEADER: usize = 4 + 4 + 1 + 4;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Converts to `T`. Widening is exact; narrowing f64 to f32 is refused.
    pub fn into_vec<T: Real>(self) -> Result<Vec<T>> {
        match (self, T::DTYPE) {
            (TensorData::F64(_), Dtype::F32) => Err(Error::InvalidArgument(
                "refusing to narrow a float64 tensor file into float32".into(),
            )),
            (TensorData::F32(v), _) => Ok(v.into_iter().map(|x| T::from_f64_lossy(x as f64)).collect()),
            (TensorData::F64(v), _) => Ok(v.into_iter().map(T::from_f64_lossy).collect()),
        }
    }

    fn from_slice<T: Real>(values: &[T]) -> Self {
        match T::DTYPE {
            Dtype::F32 => TensorData::F32(values.iter().map(|x| x.as_f64() as f32).collect()),
            Dtype::F64 => TensorData::F64(values.iter().map(|x| x.as_f64()).collect()),
        }
    }
}

/// A decoded tensor file of any rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl RawTensor {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            FIXED_HEADER + 8 * self.dims.len() + self.data.len() * self.data.dtype().size_of(),
        );
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.data.dtype().code());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| x.write_le(&mut out)),
            TensorData::F64(v) => v.iter().for_each(|x| x.write_le(&mut out)),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let actual = bytes.len() as u64;
        if bytes.len() < 4 {
            return Err(Error::Truncated {
                expected: FIXED_HEADER as u64,
                actual,
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        if bytes.len() < FIXED_HEADER {
            return Err(Error::Truncated {
                expected: FIXED_HEADER as u64,
                actual,
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dtype = Dtype::from_code(bytes[8]).ok_or(Error::UnsupportedDtype(bytes[8]))?;
        let rank = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as u64;

        let header_len = FIXED_HEADER as u64 + 8 * rank;
        if actual < header_len {
            return Err(Error::Truncated {
                expected: header_len,
                actual,
            });
        }
        let dims: Vec<u64> = bytes[FIXED_HEADER..header_len as usize]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let numel = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidArgument(format!("tensor dims {dims:?} overflow u64")))?;
        let expected = numel
            .checked_mul(dtype.size_of() as u64)
            .and_then(|p| p.checked_add(header_len))
            .ok_or_else(|| Error::InvalidArgument(format!("tensor dims {dims:?} overflow u64")))?;
        if actual < expected {
            return Err(Error::Truncated { expected, actual });
        }
        if actual > expected {
            return Err(Error::TrailingBytes {
                actual: actual - expected,
            });
        }

        let payload = &bytes[header_len as usize..];
        let data = match dtype {
            Dtype::F32 => TensorData::F32(payload.chunks_exact(4).map(f32::read_le).collect()),
            Dtype::F64 => TensorData::F64(payload.chunks_exact(8).map(f64::read_le).collect()),
        };
        Ok(RawTensor { dims, data })
    }
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &RawTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<RawTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RawTensor::decode(&bytes).map_err(|e| Error::in_file(path, e))
}

impl<T: Real> From<&Matrix<T>> for RawTensor {
    fn from(m: &Matrix<T>) -> Self {
        RawTensor {
            dims: vec![m.rows() as u64, m.cols() as u64],
            data: TensorData::from_slice(m.data()),
        }
    }
}

impl<T: Real> From<&FeatureMap<T>> for RawTensor {
    fn from(f: &FeatureMap<T>) -> Self {
        let (c, h, w) = f.dims();
        RawTensor {
            dims: vec![c as u64, h as u64, w as u64],
            data: TensorData::from_slice(f.data()),
        }
    }
}

impl RawTensor {
    pub fn into_matrix<T: Real>(self) -> Result<Matrix<T>> {
        match self.dims[..] {
            [rows, cols] => Matrix::from_vec(rows as usize, cols as usize, self.data.into_vec()?),
            _ => Err(Error::shape("load_matrix", "rank 2", format!("rank {}", self.dims.len()))),
        }
    }

    pub fn into_feature_map<T: Real>(self) -> Result<FeatureMap<T>> {
        match self.dims[..] {
            [c, h, w] => FeatureMap::new(c as usize, h as usize, w as usize, self.data.into_vec()?),
            _ => Err(Error::shape(
                "load_feature_map",
                "rank 3",
                format!("rank {}", self.dims.len()),
            )),
        }
    }
}

pub fn save_matrix<T: Real>(path: impl AsRef<Path>, m: &Matrix<T>) -> Result<()> {
    save_tensor(path, &RawTensor::from(m))
}

pub fn load_matrix<T: Real>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    let path = path.as_ref();
    load_tensor(path)?.into_matrix().map_err(|e| Error::in_file(path, e))
}

pub fn save_feature_map<T: Real>(path: impl AsRef<Path>, f: &FeatureMap<T>) -> Result<()> {
    save_tensor(path, &RawTensor::from(f))
}

pub fn load_feature_map<T: Real>(path: impl AsRef<Path>) -> Result<FeatureMap<T>> {
    let path = path.as_ref();
    load_tensor(path)?.into_feature_map().map_err(|e| Error::in_file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{random_matrix, Distribution};

    #[test]
    fn header_layout_is_exact() {
        let m = Matrix::from_rows(&[&[1.0f64, 2.0]]).unwrap();
        let bytes = RawTensor::from(&m).encode();
        let mut expected = b"FATN".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.push(2);
        expected.extend_from_slice(&[2, 0, 0, 0]);
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&2.0f64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fatn");
        let m = random_matrix::<f64>(3, 5, 1, Distribution::standard_normal());
        save_matrix(&path, &m).unwrap();
        let back: Matrix = load_matrix(&path).unwrap();
        let bits = |m: &Matrix| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));

        let m32 = random_matrix::<f32>(2, 2, 1, Distribution::UNIT);
        save_matrix(&path, &m32).unwrap();
        assert_eq!(load_matrix::<f32>(&path).unwrap(), m32);
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = RawTensor::from(&Matrix::<f64>::zeros(1, 1)).encode();
        bytes[0] = b'X';
        assert!(matches!(RawTensor::decode(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn bad_version_and_dtype() {
        let good = RawTensor::from(&Matrix::<f64>::zeros(1, 1)).encode();
        let mut v = good.clone();
        v[4] = 2;
        assert!(matches!(RawTensor::decode(&v), Err(Error::UnsupportedVersion(2))));
        let mut d = good;
        d[8] = 9;
        assert!(matches!(RawTensor::decode(&d), Err(Error::UnsupportedDtype(9))));
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let bytes = RawTensor::from(&Matrix::<f64>::zeros(3, 5)).encode();
        let full = bytes.len() as u64;
        let err = RawTensor::decode(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Truncated { expected, actual } => {
                assert_eq!(expected, full);
                assert_eq!(actual, full - 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_msg(&bytes[..bytes.len() - 3]).contains(&full.to_string()));
    }

    fn err_msg(bytes: &[u8]) -> String {
        RawTensor::decode(bytes).unwrap_err().to_string()
    }

    #[test]
    fn refuses_narrowing_and_wrong_rank() {
        let raw = RawTensor::from(&Matrix::<f64>::zeros(2, 2));
        assert!(raw.clone().into_matrix::<f32>().is_err());
        assert!(raw.into_feature_map::<f64>().is_err());
    }
}
