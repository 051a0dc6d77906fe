//! Binary checkpoint files.
//!
//! Layout: the 5-byte magic `RNIN1`, a little-endian `u64` header length,
//! a JSON header (format version, model config, training metadata and a
//! tensor table of name, shape and byte offset) and finally the tensors as
//! raw little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"RNIN1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &Model, meta: &TrainingMeta, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for (_, p) in model.store().iter() {
        tensors.push(TensorEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), offset: blob.len() as u64 });
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        meta: meta.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(5 + 8 + header.len() + blob.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob);
    fs::write(path, out)?;
    Ok(())
}

fn parse(bytes: &[u8]) -> Result<(Header, &[u8]), ModelError> {
    if bytes.len() < 13 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(ModelError::VersionMismatch("missing or unknown file magic".into()));
    }
    let len = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    let body = &bytes[13..];
    if body.len() < len {
        return Err(ModelError::VersionMismatch("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..len])
        .map_err(|e| ModelError::VersionMismatch(format!("unreadable header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch(format!("file version {}, expected {CHECKPOINT_VERSION}", header.version)));
    }
    Ok((header, &body[len..]))
}

fn fill(model: &mut Model, header: &Header, blob: &[u8]) -> Result<(), ModelError> {
    let ids: Vec<_> = model.store().iter().map(|(id, p)| (id, p.name.clone(), p.value.shape().to_vec())).collect();
    for (id, name, shape) in ids {
        let entry = header.tensors.iter().find(|t| t.name == name).ok_or_else(|| ModelError::MissingParameter(name.clone()))?;
        if entry.shape != shape {
            return Err(ModelError::ShapeMismatch { name, expected: shape, found: entry.shape.clone() });
        }
        let n: usize = shape.iter().product();
        let start = entry.offset as usize;
        let bytes = blob.get(start..start + 8 * n).ok_or_else(|| ModelError::MissingParameter(name.clone()))?;
        let data: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        model.store_mut().set_value(id, &data);
    }
    Ok(())
}

/// Loads a checkpoint, rebuilding the model from the stored config.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, TrainingMeta), ModelError> {
    let bytes = fs::read(path)?;
    let (header, blob) = parse(&bytes)?;
    let mut model = Model::new(header.config.clone(), 0)?;
    fill(&mut model, &header, blob)?;
    Ok((model, header.meta))
}

impl Model {
    /// Overwrites this model's parameters from a checkpoint; the stored
    /// tensors must match this model's configuration.
    pub fn load_params(&mut self, path: impl AsRef<Path>) -> Result<TrainingMeta, ModelError> {
        let bytes = fs::read(path)?;
        let (header, blob) = parse(&bytes)?;
        fill(self, &header, blob)?;
        Ok(header.meta)
    }
}
