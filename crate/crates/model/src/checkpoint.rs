//! Checkpoint container.
//!
//! Layout: the 8-byte magic `FDCKPT01`, a little-endian `u64` header length,
//! a JSON header (config, seed, vocabulary hash, tensor table), then the
//! tensors as contiguous little-endian `f32` in table order.

use std::fs;
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use formula_distill_core::vocab::Vocab;

use crate::config::{ModelConfig, ModelError, Result};
use crate::model::SeqModel;

const MAGIC: &[u8; 8] = b"FDCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in `f32` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    pub seed: u64,
    pub vocab_hash: String,
    pub tensors: Vec<TensorEntry>,
}

/// Hex SHA-256 of the vocabulary JSON table.
pub fn vocab_hash(vocab: &Vocab) -> String {
    let digest = Sha256::digest(vocab.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_bytes(model: &SeqModel) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0;
    for (name, var) in model.params.named() {
        let values: Vec<f32> = var.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
        tensors.push(TensorEntry { name: name.clone(), shape: var.dims().to_vec(), offset });
        offset += values.len();
        for v in values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header { config: model.config.clone(), seed: model.seed, vocab_hash: vocab_hash(&Vocab::new()), tensors };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn save(model: &SeqModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| ModelError::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..end]).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    Ok((header, &bytes[end..]))
}

/// Rebuild a model; the vocabulary hash must match this build's table.
pub fn from_bytes(bytes: &[u8]) -> Result<SeqModel> {
    let (header, blob) = read_header(bytes)?;
    let expected = vocab_hash(&Vocab::new());
    if header.vocab_hash != expected {
        return Err(ModelError::CheckpointMismatch { expected, found: header.vocab_hash });
    }
    let model = SeqModel::new(header.config.clone(), header.seed, DType::F32)?;
    if header.tensors.len() != model.params.named().len() {
        return Err(ModelError::Checkpoint(format!(
            "{} tensors stored but the config defines {}",
            header.tensors.len(),
            model.params.named().len()
        )));
    }
    for entry in &header.tensors {
        let var = model.params.var(&entry.name).ok_or_else(|| ModelError::Checkpoint(format!("unknown tensor {}", entry.name)))?;
        if var.dims() != entry.shape.as_slice() {
            return Err(ModelError::Checkpoint(format!("shape mismatch for {}", entry.name)));
        }
        let n: usize = entry.shape.iter().product();
        let start = entry.offset * 4;
        let bytes = blob.get(start..start + n * 4).ok_or_else(|| ModelError::Checkpoint(format!("truncated tensor {}", entry.name)))?;
        let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        var.set(&Tensor::from_vec(values, entry.shape.as_slice(), model.device())?)?;
    }
    Ok(model)
}

pub fn load(path: &Path) -> Result<SeqModel> {
    from_bytes(&fs::read(path)?)
}
