//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "XTALCKPT"
//! version  u32
//! fingerprint u64   hash of the architecture-defining config
//! step     u64
//! count    u32
//! count x { name_len u32, name utf8, dtype u8 (0 = f64, 1 = u64),
//!           ndim u32, dims u64 x ndim, payload 8 bytes per element }
//! ```
//!
//! Trailing bytes after the last array are rejected.

use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"XTALCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("config fingerprint {found:016x} does not match current config {expected:016x}")]
    Fingerprint { found: u64, expected: u64 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("missing array {0:?}")]
    MissingArray(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CheckpointError {
    /// Stable code per failure class.
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::BadMagic => "bad-magic",
            CheckpointError::Version { .. } => "version",
            CheckpointError::Truncated => "truncated",
            CheckpointError::Fingerprint { .. } => "fingerprint",
            CheckpointError::Corrupt(_) => "corrupt",
            CheckpointError::MissingArray(_) => "missing-array",
            CheckpointError::Io(_) => "io",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub fingerprint: u64,
    pub step: u64,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(fingerprint: u64, step: u64) -> Self {
        Self { fingerprint, step, arrays: Vec::new() }
    }

    pub fn push_f64(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.arrays.push(NamedArray { name: name.into(), shape, data: ArrayData::F64(data) });
    }

    pub fn push_u64(&mut self, name: impl Into<String>, data: Vec<u64>) {
        let shape = vec![data.len()];
        self.arrays.push(NamedArray { name: name.into(), shape, data: ArrayData::U64(data) });
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.push_f64(name, t.shape().to_vec(), t.data().to_vec());
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray, CheckpointError> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| CheckpointError::MissingArray(name.to_string()))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64], CheckpointError> {
        match &self.get(name)?.data {
            ArrayData::F64(v) => Ok(v),
            ArrayData::U64(_) => Err(CheckpointError::Corrupt(format!("{name} is not f64"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64], CheckpointError> {
        match &self.get(name)?.data {
            ArrayData::U64(v) => Ok(v),
            ArrayData::F64(_) => Err(CheckpointError::Corrupt(format!("{name} is not u64"))),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor, CheckpointError> {
        let a = self.get(name)?;
        Tensor::new(a.shape.clone(), self.f64s(name)?.to_vec())
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }

    pub fn check_fingerprint(&self, expected: u64) -> Result<(), CheckpointError> {
        if self.fingerprint != expected {
            return Err(CheckpointError::Fingerprint { found: self.fingerprint, expected });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            match &a.data {
                ArrayData::F64(_) => out.push(0),
                ArrayData::U64(_) => out.push(1),
            }
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &a.data {
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < MAGIC.len() {
            return if MAGIC.starts_with(bytes) { Err(CheckpointError::Truncated) } else { Err(CheckpointError::BadMagic) };
        }
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version, expected: FORMAT_VERSION });
        }
        let fingerprint = r.u64()?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Corrupt("array name is not utf-8".into()))?;
            let dtype = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| CheckpointError::Corrupt(format!("shape overflow in {name}")))?;
            let byte_len = numel.checked_mul(8).ok_or(CheckpointError::Truncated)?;
            let payload = r.take(byte_len)?;
            let words = payload.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap()));
            let data = match dtype {
                0 => ArrayData::F64(words.map(f64::from_bits).collect()),
                1 => ArrayData::U64(words.collect()),
                t => return Err(CheckpointError::Corrupt(format!("unknown dtype tag {t}"))),
            };
            debug_assert_eq!(data.len(), numel);
            arrays.push(NamedArray { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { fingerprint, step, arrays })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(0xdead_beef, 42);
        c.push_f64("w", vec![2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -2.25]);
        c.push_u64("counts", vec![1, 2, u64::MAX]);
        c.push_f64("scalar", vec![], vec![0.5]);
        c
    }

    #[test]
    fn round_trip_bitwise() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let w = back.f64s("w").unwrap();
        assert_eq!(w[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn every_truncation_is_detected() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            let e = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(e, CheckpointError::Truncated), "cut {cut}: {e}");
        }
    }

    #[test]
    fn distinct_errors() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'Y';
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap_err().code(), "bad-magic");
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap_err().code(), "version");
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap_err().code(), "corrupt");
        assert_eq!(sample().check_fingerprint(1).unwrap_err().code(), "fingerprint");
        assert!(sample().check_fingerprint(0xdead_beef).is_ok());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        save_checkpoint(&p, &sample()).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), sample());
    }
}
