//! Ordered, named tensor storage and the `.cfsrwt` file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CFSRWT01"                        8-byte magic, last two bytes are the version
//! u32 entry count
//! per entry:
//!   u16 name length, UTF-8 name
//!   u8  dtype (0 = f32)
//!   u8  rank, rank x u32 dims
//!   payload, f32 little-endian
//! u8 mode (0 = branched, 1 = fused)
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use thiserror::Error;

use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"CFSRWT01";
const MAGIC_PREFIX: &[u8; 6] = b"CFSRWT";
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreMode {
    /// Training form: every edge-preserving layer keeps its five branches.
    Branched,
    /// Inference form: each edge-preserving layer is one depth-wise conv.
    Fused,
}

impl StoreMode {
    fn tag(self) -> u8 {
        match self {
            StoreMode::Branched => 0,
            StoreMode::Fused => 1,
        }
    }
}

impl std::fmt::Display for StoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StoreMode::Branched => "branched",
            StoreMode::Fused => "fused",
        })
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight file version {0:?} (expected \"01\")")]
    VersionMismatch(String),
    #[error("truncated weight file while reading {0}")]
    Truncated(String),
    #[error("tensor {name}: unsupported dtype tag {tag}")]
    UnsupportedDtype { name: String, tag: u8 },
    #[error("tensor {name}: unsupported rank {rank}")]
    BadRank { name: String, rank: usize },
    #[error("tensor name is not valid UTF-8")]
    InvalidName,
    #[error("duplicate tensor name {0}")]
    DuplicateName(String),
    #[error("invalid mode flag {0}")]
    BadMode(u8),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("tensor name {0} too long")]
    NameTooLong(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    mode: StoreMode,
    entries: IndexMap<String, Tensor>,
}

impl WeightStore {
    pub fn new(mode: StoreMode) -> Self {
        Self {
            mode,
            entries: IndexMap::new(),
        }
    }

    pub fn mode(&self) -> StoreMode {
        self.mode
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), StoreError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(StoreError::DuplicateName(name));
        }
        let mut tensor = tensor;
        tensor.clear_grad();
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of stored scalars.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, StoreError> {
        let payload: usize = self.entries.values().map(|t| t.numel() * 4).sum();
        let mut out = Vec::with_capacity(16 + payload + self.entries.len() * 48);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len()).map_err(|_| StoreError::NameTooLong(name.clone()))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            let dims = t.shape().compact_dims();
            out.push(dims.len() as u8);
            for d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.push(self.mode.tag());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic").map_err(|_| StoreError::BadMagic)?;
        if magic != MAGIC {
            if &magic[..6] == MAGIC_PREFIX {
                return Err(StoreError::VersionMismatch(String::from_utf8_lossy(&magic[6..]).into_owned()));
            }
            return Err(StoreError::BadMagic);
        }
        let count = r.u32("entry count")? as usize;
        let mut entries = IndexMap::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| StoreError::InvalidName)?
                .to_string();
            let tag = r.u8(&name)?;
            if tag != DTYPE_F32 {
                return Err(StoreError::UnsupportedDtype { name, tag });
            }
            let rank = r.u8(&name)? as usize;
            if rank == 0 || rank > 4 {
                return Err(StoreError::BadRank { name, rank });
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32(&name)? as usize);
            }
            let shape = Shape::from_dims(&dims).ok_or(StoreError::BadRank {
                name: name.clone(),
                rank,
            })?;
            let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let nbytes = numel
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| StoreError::Truncated(name.clone()))?;
            let raw = r.take(nbytes, &name)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::from_vec(shape, data).expect("length computed from shape");
            if entries.insert(name.clone(), tensor).is_some() {
                return Err(StoreError::DuplicateName(name));
            }
        }
        let mode = match r.u8("mode flag")? {
            0 => StoreMode::Branched,
            1 => StoreMode::Fused,
            other => return Err(StoreError::BadMode(other)),
        };
        if r.pos != bytes.len() {
            return Err(StoreError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { mode, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| StoreError::Truncated(what.to_string()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, StoreError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, StoreError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, StoreError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightStore {
        let mut s = WeightStore::new(StoreMode::Branched);
        s.insert("a.weight", Tensor::from_fn(Shape::new(2, 3, 1, 1), |i| i as f32 - 2.5)).unwrap();
        s.insert("a.bias", Tensor::from_vec(Shape::vector(2), vec![f32::MIN_POSITIVE, -0.0]).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn exact_layout() {
        let mut s = WeightStore::new(StoreMode::Fused);
        s.insert("b", Tensor::from_vec(Shape::vector(1), vec![1.0]).unwrap()).unwrap();
        let bytes = s.to_bytes().unwrap();
        let mut expected = b"CFSRWT01".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&[1, 0, b'b', 0, 1, 1, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.push(1);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let bytes = s.to_bytes().unwrap();
        let back = WeightStore::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.get("a.bias").unwrap().data()[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn header_errors() {
        assert!(matches!(WeightStore::from_bytes(b"NOTAFILE...."), Err(StoreError::BadMagic)));
        assert!(matches!(WeightStore::from_bytes(b"CFS"), Err(StoreError::BadMagic)));
        assert!(matches!(
            WeightStore::from_bytes(b"CFSRWT02\0\0\0\0\0"),
            Err(StoreError::VersionMismatch(v)) if v == "02"
        ));
    }

    #[test]
    fn truncation_detected_everywhere() {
        let bytes = sample().to_bytes().unwrap();
        for cut in 8..bytes.len() {
            assert!(
                matches!(WeightStore::from_bytes(&bytes[..cut]), Err(StoreError::Truncated(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn trailing_and_mode_errors() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes.push(0);
        assert!(matches!(WeightStore::from_bytes(&bytes), Err(StoreError::TrailingBytes(1))));
        bytes.pop();
        *bytes.last_mut().unwrap() = 7;
        assert!(matches!(WeightStore::from_bytes(&bytes), Err(StoreError::BadMode(7))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = sample();
        assert!(matches!(s.insert("a.bias", Tensor::zeros(Shape::vector(1))), Err(StoreError::DuplicateName(_))));
    }
}
