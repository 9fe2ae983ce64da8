//! Binary checkpoint format.
//!
//! Layout: 8-byte magic, `u32` metadata length, metadata JSON, `u32` tensor
//! count, then per tensor `u16` name length, name, `u8` rank, `u32` dims and
//! the little-endian `f32` payload. A trailing FNV-1a 64 digest over every
//! preceding byte closes the file. All integers are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{Encoder, EncoderConfig, ProjectionHeadConfig, Tensor};
use crate::rng::fnv1a64;

pub const MAGIC: &[u8; 8] = b"FCLCKPT1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("digest mismatch: stored {stored:016x}, computed {computed:016x}")]
    Digest { stored: u64, computed: u64 },
    #[error("file too short to hold a digest")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("checkpoint does not match the encoder config: {}", .0.join("; "))]
    Shape(Vec<String>),
    #[error("unknown tensors for this config: {}", .0.join(", "))]
    UnknownTensors(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Contrastive,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub projection: Option<ProjectionHeadConfig>,
    pub config_digest: String,
    pub epoch: usize,
    pub final_loss: Option<f64>,
    pub seed: u64,
    /// Operating threshold chosen on validation data (classifiers only).
    #[serde(default)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Expected tensor names and shapes for this checkpoint's kind.
    fn expected(&self, encoder: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
        let mut shapes = encoder.param_shapes();
        match self.meta.kind {
            CheckpointKind::Contrastive => {
                if let Some(p) = self.meta.projection {
                    let e = encoder.embedding_dim;
                    shapes.push(("projection.fc1.weight".into(), vec![p.hidden_dim, e]));
                    shapes.push(("projection.fc1.bias".into(), vec![p.hidden_dim]));
                    shapes.push(("projection.fc2.weight".into(), vec![p.output_dim, p.hidden_dim]));
                    shapes.push(("projection.fc2.bias".into(), vec![p.output_dim]));
                }
            }
            CheckpointKind::Classifier => {
                shapes.push(("head.weight".into(), vec![2, encoder.embedding_dim]));
                shapes.push(("head.bias".into(), vec![2]));
            }
        }
        shapes
    }

    /// Checks every stored tensor against `encoder` (and the head implied
    /// by the checkpoint kind). Lists each offending tensor by name.
    pub fn audit(&self, encoder: &EncoderConfig) -> Result<(), CheckpointError> {
        let expected = self.expected(encoder);
        let mut problems = Vec::new();
        for (name, shape) in &expected {
            match self.tensor(name) {
                Some(t) if &t.shape == shape => {}
                Some(t) => problems.push(format!("{name}: expected {shape:?}, found {:?}", t.shape)),
                None => problems.push(format!("{name}: missing (expected {shape:?})")),
            }
        }
        if !problems.is_empty() {
            return Err(CheckpointError::Shape(problems));
        }
        let unknown: Vec<String> = self.tensors.iter().filter(|(n, _)| !expected.iter().any(|(e, _)| e == n)).map(|(n, _)| n.clone()).collect();
        if !unknown.is_empty() {
            return Err(CheckpointError::UnknownTensors(unknown));
        }
        Ok(())
    }

    /// Rebuilds the encoder stored in this checkpoint, checked against `config`.
    pub fn encoder_for(&self, config: &EncoderConfig) -> Result<Encoder, CheckpointError> {
        self.audit(config)?;
        Encoder::from_named(config.clone(), |n| self.tensor(n)).map_err(CheckpointError::Shape)
    }

    pub fn encoder(&self) -> Result<Encoder, CheckpointError> {
        self.encoder_for(&self.meta.encoder.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(64 + meta.len() + self.tensors.iter().map(|(_, t)| t.numel() * 4 + 64).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&u32::try_from(meta.len()).map_err(|_| CheckpointError::Malformed("metadata too large".into()))?.to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len()).map_err(|_| CheckpointError::Malformed(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::try_from(t.shape.len()).map_err(|_| CheckpointError::Malformed(format!("rank too large: {name}")))?);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        let digest = fnv1a64(&out);
        out.extend_from_slice(&digest.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(CheckpointError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let computed = fnv1a64(body);
        if stored != computed {
            return Err(CheckpointError::Digest { stored, computed });
        }
        if &body[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut r = Reader { buf: body, pos: 8 };
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = usize::from(r.u16()?);
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
            let rank = usize::from(r.take(1)?[0]);
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = r.take(numel.checked_mul(4).ok_or_else(|| CheckpointError::Malformed("tensor too large".into()))?)?;
            let data = payload.chunks_exact(4).map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().expect("4 bytes")))).collect();
            tensors.push((name, Tensor { shape, data }));
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self { meta, tensors })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| CheckpointError::Malformed("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let bytes = ckpt.to_bytes()?;
    std::fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads and verifies the digest, then audits tensors against the stored config.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    ckpt.audit(&ckpt.meta.encoder)?;
    Ok(ckpt)
}

/// Hex FNV-1a digest of a value's canonical JSON form.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serialises");
    format!("{:016x}", fnv1a64(&json))
}

/// Collects named tensors from any number of parameter stores.
pub fn collect_tensors<'a>(stores: impl IntoIterator<Item = &'a crate::nn::ParamStore>) -> Vec<(String, Tensor)> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for store in stores {
        for (name, t) in store.iter() {
            assert!(seen.insert(name.to_string(), ()).is_none(), "duplicate tensor name {name}");
            out.push((name.to_string(), t.clone()));
        }
    }
    out
}
