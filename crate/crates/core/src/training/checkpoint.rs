//! Binary checkpoint container.
//!
//! ```text
//! b"FKCKPT01" | u64 LE header length | JSON header | f64 LE tensor data | SHA-256 of all preceding bytes
//! ```
//!
//! The header holds the model config, training mode, vocabulary hash, frame
//! labels, and the name and length of every tensor in storage order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{Mode, Vocabulary};
use crate::fsutil::write_atomic;
use crate::model::{ModelConfig, ModelParams};

const MAGIC: &[u8; 8] = b"FKCKPT01";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(
        "vocabulary hash mismatch: checkpoint has {stored}, supplied vocabulary has {supplied}"
    )]
    VocabMismatch { stored: String, supplied: String },
    #[error("checkpoint was trained in {stored} mode, not {requested}")]
    ModeMismatch { stored: Mode, requested: Mode },
    #[error("vocabulary file: {0}")]
    Vocab(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub mode: Mode,
    pub vocab_hash: String,
    pub frame_labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    mode: Mode,
    vocab_hash: String,
    frame_labels: Vec<String>,
    tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let tensors = ckpt.params.tensors();
    let header = Header {
        model_config: ckpt.params.config.clone(),
        mode: ckpt.mode,
        vocab_hash: ckpt.vocab_hash.clone(),
        frame_labels: ckpt.frame_labels.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                len: t.len(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let data_len: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut out = Vec::with_capacity(16 + header.len() + data_len + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in &tensors {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let corrupt = |m: &str| CheckpointError::Corrupt(m.to_owned());
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN {
        return Err(corrupt("file too short"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified)"));
    }
    let header_len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length exceeds file"))?;
    let header: Header = serde_json::from_slice(&body[16..header_end])
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    header
        .model_config
        .validate()
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let mut params = ModelParams::zeros(&header.model_config);
    let mut data = &body[header_end..];
    {
        let tensors = params.tensors_mut();
        if tensors.len() != header.tensors.len() {
            return Err(corrupt("tensor count does not match config"));
        }
        for ((name, t), entry) in tensors.into_iter().zip(&header.tensors) {
            if name != entry.name || t.len() != entry.len {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor {} does not match config",
                    entry.name
                )));
            }
            let n = t.len() * 8;
            if data.len() < n {
                return Err(corrupt("tensor data truncated"));
            }
            for (v, chunk) in t.iter_mut().zip(data[..n].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            data = &data[n..];
        }
    }
    if !data.is_empty() {
        return Err(corrupt("trailing bytes after tensor data"));
    }
    Ok(Checkpoint {
        params,
        mode: header.mode,
        vocab_hash: header.vocab_hash,
        frame_labels: header.frame_labels,
    })
}

/// Where the vocabulary of a checkpoint lives.
pub fn vocab_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".vocab.json");
    PathBuf::from(s)
}

/// Writes the checkpoint and its vocabulary file, each atomically.
pub fn save_checkpoint(
    ckpt: &Checkpoint,
    vocab: &Vocabulary,
    path: &Path,
) -> Result<(), CheckpointError> {
    let vpath = vocab_path(path);
    let vjson = serde_json::to_vec(vocab).expect("vocabulary serializes");
    write_atomic(&vpath, &vjson).map_err(io_err(&vpath))?;
    write_atomic(path, &checkpoint_to_bytes(ckpt)).map_err(io_err(path))
}

pub fn load_vocab(checkpoint: &Path) -> Result<Vocabulary, CheckpointError> {
    let vpath = vocab_path(checkpoint);
    let text = std::fs::read(&vpath).map_err(io_err(&vpath))?;
    serde_json::from_slice(&text).map_err(|e| CheckpointError::Vocab(e.to_string()))
}

/// Reads a checkpoint, refusing it if its vocabulary hash differs from
/// `vocab` or its mode differs from `mode`.
pub fn load_checkpoint(
    path: &Path,
    vocab: &Vocabulary,
    mode: Option<Mode>,
) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let ckpt = checkpoint_from_bytes(&bytes)?;
    let supplied = vocab.hash();
    if ckpt.vocab_hash != supplied {
        return Err(CheckpointError::VocabMismatch {
            stored: ckpt.vocab_hash,
            supplied,
        });
    }
    if let Some(requested) = mode {
        if requested != ckpt.mode {
            return Err(CheckpointError::ModeMismatch {
                stored: ckpt.mode,
                requested,
            });
        }
    }
    Ok(ckpt)
}
