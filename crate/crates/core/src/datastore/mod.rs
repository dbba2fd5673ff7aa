//! On-disk tensors ("MEMA" files), validated representation/label sets and
//! JSON run manifests.
//!
//! Tensor layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "MEMA"
//! version  u32      1
//! dtype    u32      1 = f32, 2 = f64, 3 = u32
//! rank     u32      1..=3
//! shape    rank x u64
//! payload  product(shape) values, row-major
//! ```

mod manifest;
mod sets;

pub use manifest::{
    read_json, write_json, CheckpointEntry, Hyperparameters, RunManifest, ShadowRecord,
};
pub use sets::{load_aligned, LabelSet, LoadOptions, RepresentationSet};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"MEMA";
pub const FORMAT_VERSION: u32 = 1;
pub const MAX_RANK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
    U32,
}

impl DType {
    pub fn code(self) -> u32 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
            DType::U32 => 3,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            3 => Ok(DType::U32),
            other => Err(Error::Unsupported {
                what: "dtype",
                value: other as u64,
            }),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U32(_) => DType::U32,
        }
    }
}

/// A typed, shaped tensor as stored in a MEMA file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

fn element_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::EmptyShape(shape.to_vec()));
    }
    if shape.len() > MAX_RANK {
        return Err(Error::RankTooLarge(shape.len()));
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .ok_or_else(|| Error::InvalidArgument(format!("shape {shape:?} overflows")))?;
    if count == 0 {
        return Err(Error::EmptyShape(shape.to_vec()));
    }
    Ok(count)
}

fn check_finite<I: IntoIterator<Item = f64>>(values: I) -> Result<()> {
    match values.into_iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let count = element_count(&shape)?;
        if count != data.len() {
            return Err(Error::CountMismatch {
                left: data.len(),
                right: count,
            });
        }
        match &data {
            TensorData::F32(v) => check_finite(v.iter().map(|&x| x as f64))?,
            TensorData::F64(v) => check_finite(v.iter().copied())?,
            TensorData::U32(_) => {}
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor of the requested dtype from real values. Casting to
    /// `U32` requires non-negative integral values.
    pub fn from_f64(shape: Vec<usize>, values: &[f64], dtype: DType) -> Result<Self> {
        check_finite(values.iter().copied())?;
        let data = match dtype {
            DType::F64 => TensorData::F64(values.to_vec()),
            DType::F32 => TensorData::F32(values.iter().map(|&v| v as f32).collect()),
            DType::U32 => {
                let mut out = Vec::with_capacity(values.len());
                for (i, &v) in values.iter().enumerate() {
                    if v < 0.0 || v > u32::MAX as f64 || v.fract() != 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "value {v} at index {i} is not representable as u32"
                        )));
                    }
                    out.push(v as u32);
                }
                TensorData::U32(out)
            }
        };
        Tensor::new(shape, data)
    }

    pub fn from_matrix(m: &Matrix, dtype: DType) -> Result<Self> {
        Tensor::from_f64(vec![m.rows(), m.cols()], m.as_slice(), dtype)
    }

    pub fn from_u32(values: Vec<u32>) -> Result<Self> {
        Tensor::new(vec![values.len()], TensorData::U32(values))
    }

    pub fn from_bools(values: &[bool]) -> Result<Self> {
        Tensor::from_u32(values.iter().map(|&b| b as u32).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn into_matrix(self) -> Result<Matrix> {
        match self.shape.as_slice() {
            &[rows, cols] => Matrix::from_vec(rows, cols, self.to_f64()),
            &[rows] => Matrix::from_vec(rows, 1, self.to_f64()),
            other => Err(Error::InvalidArgument(format!(
                "expected a rank-2 tensor, found shape {other:?}"
            ))),
        }
    }

    pub fn into_u32(self) -> Result<Vec<u32>> {
        match self.data {
            TensorData::U32(v) => Ok(v),
            other => Err(Error::InvalidArgument(format!(
                "expected u32 tensor, found {:?}",
                other.dtype()
            ))),
        }
    }

    pub fn into_bools(self) -> Result<Vec<bool>> {
        let values = self.into_u32()?;
        values
            .into_iter()
            .map(|v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::InvalidArgument(format!(
                    "mask value {other} is not 0/1"
                ))),
            })
            .collect()
    }

    pub fn encoded_len(&self) -> usize {
        16 + 8 * self.shape.len() + self.data.len() * self.dtype().size()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.dtype().code().to_le_bytes());
        buf.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &s in &self.shape {
            buf.extend_from_slice(&(s as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::U32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        buf
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic = cursor.take(4).ok_or_else(|| Error::BadMagic(origin.to_path_buf()))?;
        if magic != MAGIC {
            return Err(Error::BadMagic(origin.to_path_buf()));
        }
        let version = cursor.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Unsupported {
                what: "version",
                value: version as u64,
            });
        }
        let dtype = DType::from_code(cursor.u32()?)?;
        let rank = cursor.u32()? as usize;
        if rank == 0 {
            return Err(Error::EmptyShape(Vec::new()));
        }
        if rank > MAX_RANK {
            return Err(Error::RankTooLarge(rank));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let s = cursor.u64()?;
            shape.push(usize::try_from(s).map_err(|_| Error::Unsupported {
                what: "dimension",
                value: s,
            })?);
        }
        let count = element_count(&shape)?;
        let expected = count
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::InvalidArgument(format!("shape {shape:?} overflows")))?;
        let payload = &bytes[cursor.pos..];
        if payload.len() != expected {
            return Err(Error::PayloadLength {
                expected,
                found: payload.len(),
            });
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U32 => TensorData::U32(
                payload
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Tensor::new(shape, data)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }

    fn truncated(&self, want: usize) -> Error {
        Error::PayloadLength {
            expected: self.pos + want,
            found: self.bytes.len(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4).ok_or_else(|| self.truncated(4))?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8).ok_or_else(|| self.truncated(8))?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Writes `path` atomically (temp file + rename).
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes a tensor and returns the number of bytes on disk.
pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<u64> {
    let bytes = tensor.encode();
    write_atomic(path.as_ref(), &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_f32_is_48_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_f64(vec![2, 2], &[1.0, 2.0, 3.0, 4.0], DType::F32).unwrap();
        let n = write_tensor(dir.path().join("m.mema"), &t).unwrap();
        assert_eq!(n, 48);
    }

    #[test]
    fn empty_shape_rejected() {
        let err = Tensor::from_f64(vec![], &[], DType::F64).unwrap_err();
        assert!(err.to_string().contains("product(shape) > 0 violated"));
        let err = Tensor::from_f64(vec![0, 3], &[], DType::F64).unwrap_err();
        assert!(err.to_string().contains("product(shape) > 0 violated"));
    }

    #[test]
    fn nan_rejected_on_write() {
        assert!(matches!(
            Tensor::from_f64(vec![2], &[1.0, f64::NAN], DType::F64),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_f64(vec![3], &[1.0, 2.0, 3.0], DType::F64).unwrap();
        let mut bytes = t.encode();
        bytes[..4].copy_from_slice(b"XXXX");
        let p = dir.path().join("bad.mema");
        fs::write(&p, bytes).unwrap();
        let err = read_tensor(&p).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_f64(vec![2, 3], &[1.0; 6], DType::F32).unwrap();
        let mut bytes = t.encode();
        bytes.pop();
        let p = dir.path().join("short.mema");
        fs::write(&p, bytes).unwrap();
        let err = read_tensor(&p).unwrap_err();
        assert!(err.to_string().contains("payload length mismatch"), "{err}");
    }

    #[test]
    fn unknown_dtype_and_version() {
        let t = Tensor::from_f64(vec![1], &[1.0], DType::F64).unwrap();
        let mut bytes = t.encode();
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            Tensor::decode(&bytes, Path::new("x")),
            Err(Error::Unsupported { what: "dtype", .. })
        ));
        let mut bytes = t.encode();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Tensor::decode(&bytes, Path::new("x")),
            Err(Error::Unsupported { what: "version", .. })
        ));
    }

    #[test]
    fn u32_cast_requires_integers() {
        assert!(Tensor::from_f64(vec![2], &[1.0, 2.5], DType::U32).is_err());
        assert!(Tensor::from_f64(vec![2], &[1.0, -1.0], DType::U32).is_err());
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        (prop::collection::vec(1usize..6, 1..=3), 0u8..3).prop_flat_map(|(shape, code)| {
            let n: usize = shape.iter().product();
            let data = match code {
                0 => prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), n)
                    .prop_map(TensorData::F32)
                    .boxed(),
                1 => prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), n)
                    .prop_map(TensorData::F64)
                    .boxed(),
                _ => prop::collection::vec(any::<u32>(), n)
                    .prop_map(TensorData::U32)
                    .boxed(),
            };
            data.prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(t in arb_tensor()) {
            let bytes = t.encode();
            prop_assert_eq!(bytes.len(), t.encoded_len());
            let back = Tensor::decode(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(back.encode(), bytes);
        }
    }
}
