//! Named-tensor archives and generator checkpoints.
//!
//! Archive layout (little-endian): 8-byte magic, u32 version, u64 metadata
//! length, UTF-8 JSON metadata, u32 tensor count, then per tensor a u32 name
//! length, the name, u32 rank, u64 extents and f64 values; finally the SHA-256
//! of all preceding bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};
use crate::train::Mode;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"ARMHCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON metadata plus named f64 tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub meta: String,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl TensorArchive {
    pub fn push_params(&mut self, prefix: &str, params: &ParamStore) {
        for (name, t) in params.iter() {
            self.tensors.push((format!("{prefix}{name}"), t.shape().to_vec(), t.to_vec()));
        }
    }

    /// Collects tensors whose names start with `prefix` into a store shaped
    /// like `template`.
    pub fn take_params(&self, prefix: &str, template: &ParamStore) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (name, t) in template.iter() {
            let full = format!("{prefix}{name}");
            let (_, shape, data) = self
                .tensors
                .iter()
                .find(|(n, _, _)| *n == full)
                .ok_or_else(|| Error::Format(format!("archive lacks tensor {full}")))?;
            if shape.as_slice() != t.shape() {
                return Err(Error::Format(format!(
                    "tensor {full} has shape {shape:?}, expected {:?}",
                    t.shape()
                )));
            }
            out.insert(name, Tensor::param(shape, data.clone())?, template.decays(name))?;
        }
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.tensors.iter().find(|(n, _, _)| n == name).map(|(_, _, d)| d.as_slice())
    }

    pub fn encode(&self, magic: [u8; 8], version: u32) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&magic);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u64).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Returns the archive and its version. `source` names the file in errors.
    pub fn decode(bytes: &[u8], magic: [u8; 8], source: &str) -> Result<(Self, u32)> {
        let bad = |reason: String| Error::Integrity {
            path: source.to_string(),
            reason,
        };
        if bytes.len() < 8 + 4 + 8 + 4 + 32 || bytes[..8] != magic {
            return Err(bad(format!(
                "not a {} file",
                String::from_utf8_lossy(&magic).to_lowercase()
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch".into()));
        }
        let mut pos = 8;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos + n;
            if end > body.len() {
                return Err(bad("truncated payload".into()));
            }
            let s = &body[pos..end];
            pos = end;
            Ok(s)
        };
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        let meta_len = u64_at(take(8)?) as usize;
        let meta = String::from_utf8(take(meta_len)?.to_vec()).map_err(|_| bad("metadata is not UTF-8".into()))?;
        let count = u32_at(take(4)?) as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = u32_at(take(4)?) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8".into()))?;
            let rank = u32_at(take(4)?) as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(u64_at(take(8)?) as usize);
            }
            let n = numel(&shape);
            let raw = take(n.checked_mul(8).ok_or_else(|| bad("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, shape, data));
        }
        if pos != body.len() {
            return Err(bad("trailing bytes after payload".into()));
        }
        Ok((TensorArchive { meta, tensors }, version))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    skeleton_fingerprint: String,
    #[serde(default)]
    mode: Mode,
}

/// A generator's configuration and parameters, tied to the skeleton it was
/// trained against.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub skeleton_fingerprint: String,
    /// Input/supervision mode the generator was trained in.
    pub mode: Mode,
}

impl Checkpoint {
    pub fn new(model: Model, skeleton_fingerprint: impl Into<String>) -> Self {
        Checkpoint {
            model,
            skeleton_fingerprint: skeleton_fingerprint.into(),
            mode: Mode::Ah2ah,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = CheckpointMeta {
            config: self.model.config().clone(),
            skeleton_fingerprint: self.skeleton_fingerprint.clone(),
            mode: self.mode,
        };
        let mut ar = TensorArchive {
            meta: serde_json::to_string(&meta).expect("metadata serializes"),
            tensors: Vec::new(),
        };
        ar.push_params("", self.model.params());
        ar.encode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let (ar, version) = TensorArchive::decode(bytes, CHECKPOINT_MAGIC, source)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Integrity {
                path: source.to_string(),
                reason: format!("unsupported checkpoint version {version}"),
            });
        }
        let meta: CheckpointMeta = serde_json::from_str(&ar.meta).map_err(|e| Error::Integrity {
            path: source.to_string(),
            reason: format!("metadata: {e}"),
        })?;
        let template = Model::new(meta.config.clone())?;
        let params = ar.take_params("", template.params())?;
        Ok(Checkpoint {
            model: Model::from_params(meta.config, params)?,
            skeleton_fingerprint: meta.skeleton_fingerprint,
            mode: meta.mode,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
