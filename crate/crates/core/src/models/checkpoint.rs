//! Binary container for named f32 tensors plus a JSON configuration block.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MSR1" | version: u32 | config_len: u64 | config JSON
//! tensor_count: u64
//! per tensor: name_len: u64 | UTF-8 name | rank: u64 | dims: u64 * rank | f32 * prod(dims)
//! ```

use std::path::Path;

use serde_json::Value;

use crate::error::{CheckpointError, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MSR1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Value,
    tensors: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// A length field, checked against the bytes that remain.
    fn len(&mut self, what: &'static str, unit: usize) -> Result<usize, CheckpointError> {
        let n = self.u64(what)?;
        match usize::try_from(n).ok().and_then(|n| n.checked_mul(unit)) {
            Some(bytes) if bytes <= self.buf.len() => Ok(n as usize),
            _ => Err(CheckpointError::Truncated(what)),
        }
    }
}

impl Checkpoint {
    pub fn new(config: Value, tensors: Vec<(String, Tensor<f32>)>) -> Self {
        Self { config, tensors }
    }

    pub fn tensors(&self) -> &[(String, Tensor<f32>)] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<f32>, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    pub fn tensor_shaped(&self, name: &str, shape: &[usize]) -> Result<&Tensor<f32>, CheckpointError> {
        let t = self.tensor(name)?;
        if t.shape() != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_vec(&self.config).expect("JSON values always serialize");
        let mut out = Vec::with_capacity(
            32 + config.len() + self.tensors.iter().map(|(n, t)| 16 + n.len() + 8 * t.rank() + 4 * t.len()).sum::<usize>(),
        );
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u64).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a whole checkpoint; nothing is returned unless every record is valid.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let config_len = r.len("config length", 1)?;
        let config: Value = serde_json::from_slice(r.take(config_len, "config")?)
            .map_err(|e| CheckpointError::Malformed(format!("config block: {e}")))?;
        // every record needs at least its two length fields
        let count = r.len("tensor count", 16)?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.len("tensor name length", 1)?;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            if tensors.iter().any(|(n, _)| n == &name) {
                return Err(CheckpointError::Malformed(format!("duplicate tensor `{name}`")));
            }
            let rank = r.len("tensor rank", 8)?;
            let mut shape = Vec::with_capacity(rank);
            let mut numel = 1usize;
            for _ in 0..rank {
                let d = r.u64("tensor dims")?;
                let d = usize::try_from(d).map_err(|_| CheckpointError::Truncated("tensor data"))?;
                numel = numel.checked_mul(d).ok_or(CheckpointError::Truncated("tensor data"))?;
                shape.push(d);
            }
            let data_bytes = numel.checked_mul(4).ok_or(CheckpointError::Truncated("tensor data"))?;
            let raw = r.take(data_bytes, "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Malformed(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if !r.buf.is_empty() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes after the last tensor",
                r.buf.len()
            )));
        }
        Ok(Self { config, tensors })
    }

    /// Writes to a temporary sibling and renames, so a crash never leaves a
    /// half-written file under `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_bytes(&std::fs::read(path)?)?)
    }
}
