//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FFCK"                      magic
//! u32                         format version (currently 1)
//! u8                          bytes per value (4 = f32, 8 = f64)
//! u32                         metadata entry count
//!   u32 len, utf8 key, u32 len, utf8 value      (per entry)
//! u32                         tensor count
//!   u32 len, utf8 name, u32 rank, u64 extent * rank, raw values   (per tensor)
//! ```
//!
//! Optimizer moments are stored as ordinary tensors named `adam.m.<param>` and
//! `adam.v.<param>`; scalar optimizer and trainer state lives in the metadata.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::adam::AdamState;
use super::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"FFCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint stores {found}-byte values, expected {expected}")]
    Precision { found: u8, expected: usize },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint string is not utf-8")]
    Utf8,
    #[error("checkpoint is missing `{0}`")]
    Missing(String),
    #[error("checkpoint entry `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint metadata `{key}` is malformed: {value}")]
    Metadata { key: String, value: String },
}

/// In-memory checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<R> {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<R>)>,
}

impl<R: Real> Default for Checkpoint<R> {
    fn default() -> Self {
        Checkpoint {
            metadata: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }
}

impl<R: Real> Checkpoint<R> {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<R>) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<R>, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn meta(&self, key: &str) -> Result<&str, CheckpointError> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CheckpointError::Missing(key.to_string()))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CheckpointError> {
        let raw = self.meta(key)?;
        raw.parse().map_err(|_| CheckpointError::Metadata {
            key: key.to_string(),
            value: raw.to_string(),
        })
    }

    /// Appends optimizer state for parameters named `names` (same order as the moments).
    pub fn push_adam(&mut self, names: &[String], state: &AdamState<R>) {
        for (name, (m, v)) in names.iter().zip(state.first_moment.iter().zip(&state.second_moment)) {
            self.push(format!("adam.m.{name}"), m.clone());
            self.push(format!("adam.v.{name}"), v.clone());
        }
        self.metadata.insert("adam.step".into(), state.step.to_string());
        self.metadata.insert("adam.beta1".into(), state.beta1.to_string());
        self.metadata.insert("adam.beta2".into(), state.beta2.to_string());
        self.metadata.insert("adam.eps".into(), state.eps.to_string());
    }

    pub fn adam(&self, names: &[String]) -> Result<AdamState<R>, CheckpointError> {
        let mut first_moment = Vec::with_capacity(names.len());
        let mut second_moment = Vec::with_capacity(names.len());
        for name in names {
            first_moment.push(self.tensor(&format!("adam.m.{name}"))?.clone());
            second_moment.push(self.tensor(&format!("adam.v.{name}"))?.clone());
        }
        Ok(AdamState {
            first_moment,
            second_moment,
            step: self.meta_parse("adam.step")?,
            beta1: self.meta_parse("adam.beta1")?,
            beta2: self.meta_parse("adam.beta2")?,
            eps: self.meta_parse("adam.eps")?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(R::BYTES as u8);
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }
        let width = r.take(1)?[0];
        if width as usize != R::BYTES {
            return Err(CheckpointError::Precision {
                found: width,
                expected: R::BYTES,
            });
        }
        let mut ck = Checkpoint::default();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            ck.metadata.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(R::BYTES).ok_or(CheckpointError::Truncated)?)?;
            let data = raw.chunks_exact(R::BYTES).map(R::read_le).collect();
            let t = Tensor::new(shape, data).map_err(|_| CheckpointError::Truncated)?;
            ck.tensors.push((name, t));
        }
        Ok(ck)
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
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
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Utf8)
    }
}
