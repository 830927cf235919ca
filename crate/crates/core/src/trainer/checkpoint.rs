//! Checkpoint directory: `weights.bin` plus `meta.json`.
//!
//! `weights.bin` starts with the magic `RCKP0001`, then for every parameter a
//! little-endian `u32` name length, the UTF-8 name, a `u64` value count and the
//! values as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedder::EmbedderConfig;
use crate::model::{ForensicModel, ModelError};
use crate::simnet::SimNetConfig;

const MAGIC: &[u8; 8] = b"RCKP0001";
const WEIGHTS: &str = "weights.bin";
const META: &str = "meta.json";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint not found at {0}")]
    Missing(String),
    #[error("corrupt checkpoint {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub embedder: EmbedderConfig,
    pub simnet: SimNetConfig,
    pub seed: u64,
    /// Optimizer steps taken to produce these weights.
    pub step: u64,
}

pub fn save_checkpoint(model: &ForensicModel, meta_seed: u64, step: u64, dir: &Path) -> Result<(), CheckpointError> {
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| CheckpointError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let meta = CheckpointMeta {
        embedder: model.embedder.config().clone(),
        simnet: model.simnet.config().clone(),
        seed: meta_seed,
        step,
    };
    let meta_path = dir.join(META);
    let json = serde_json::to_string_pretty(&meta).expect("checkpoint metadata serializes");
    std::fs::write(&meta_path, json + "\n").map_err(io(&meta_path))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for p in model.params() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.len() as u64).to_le_bytes());
        for v in &p.value {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let weights = dir.join(WEIGHTS);
    std::fs::File::create(&weights)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(io(&weights))
}

/// Loads a checkpoint and returns the model with its metadata.
pub fn load_checkpoint(dir: &Path) -> Result<(ForensicModel, CheckpointMeta), CheckpointError> {
    let meta_path = dir.join(META);
    let weights_path = dir.join(WEIGHTS);
    if !meta_path.is_file() || !weights_path.is_file() {
        return Err(CheckpointError::Missing(dir.display().to_string()));
    }
    let corrupt = |path: &Path, message: String| CheckpointError::Corrupt {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(&meta_path).map_err(|source| CheckpointError::Io {
        path: meta_path.display().to_string(),
        source,
    })?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| corrupt(&meta_path, e.to_string()))?;
    let mut model = ForensicModel::new(&meta.embedder, &meta.simnet)?;

    let mut bytes = Vec::new();
    std::fs::File::open(&weights_path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CheckpointError::Io {
            path: weights_path.display().to_string(),
            source,
        })?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8) != Some(MAGIC.as_slice()) {
        return Err(corrupt(&weights_path, "bad magic".into()));
    }
    for p in model.params_mut() {
        let truncated = || corrupt(&weights_path, format!("truncated at parameter {}", p.name));
        let name_len = cur.u32().ok_or_else(truncated)? as usize;
        let name = cur.take(name_len).ok_or_else(truncated)?;
        if name != p.name.as_bytes() {
            return Err(CheckpointError::ConfigMismatch(format!(
                "expected parameter {}, found {}",
                p.name,
                String::from_utf8_lossy(name)
            )));
        }
        let len = cur.u64().ok_or_else(truncated)? as usize;
        if len != p.value.len() {
            return Err(CheckpointError::ConfigMismatch(format!(
                "parameter {} has {} values in the weights file but the configured model needs {}",
                p.name,
                len,
                p.value.len()
            )));
        }
        let raw = cur.take(len * 8).ok_or_else(truncated)?;
        for (v, b) in p.value.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
        }
    }
    if cur.pos != bytes.len() {
        return Err(corrupt(&weights_path, "trailing bytes after the last parameter".into()));
    }
    Ok((model, meta))
}

/// Like [`load_checkpoint`], but fails unless the stored architecture matches
/// the expected configs. Seeds and the freeze flag may differ.
pub fn load_checkpoint_expecting(
    dir: &Path,
    embedder: &EmbedderConfig,
    simnet: &SimNetConfig,
) -> Result<(ForensicModel, CheckpointMeta), CheckpointError> {
    let (model, meta) = load_checkpoint(dir)?;
    if meta.embedder.embed_dim != embedder.embed_dim {
        return Err(CheckpointError::ConfigMismatch(format!(
            "embed_dim is {} in the checkpoint, {} expected",
            meta.embedder.embed_dim, embedder.embed_dim
        )));
    }
    let e = &meta.embedder;
    let same_embedder = e.backbone == embedder.backbone && e.hidden_dim == embedder.hidden_dim && e.channels == embedder.channels;
    let same_simnet = meta.simnet.hidden_dim == simnet.hidden_dim && meta.simnet.activation == simnet.activation;
    if !same_embedder || !same_simnet {
        return Err(CheckpointError::ConfigMismatch("architecture differs from the configured model".into()));
    }
    Ok((model, meta))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}
