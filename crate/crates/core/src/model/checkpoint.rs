//! Binary checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "UPDBCKPT"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      4     header length H in bytes, u32 little-endian
//! 16      H     UTF-8 JSON header: {config, vocab, metadata, tensors}
//! 16+H    4*N   parameters as f32 little-endian
//! ```
//!
//! `tensors` lists `{name, shape, offset}` for every tensor, where `offset`
//! counts f32 values from the start of the payload. Tensors appear in the
//! model's visiting order and are packed without gaps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::layers::Parameters;
use super::{ModelConfig, ModelParams, Vocab};

pub const MAGIC: &[u8; 8] = b"UPDBCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocab,
    /// Free-form settings the model was trained under (tokenization mode...).
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

fn format_err(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, shape) in ckpt.params.tensor_index() {
        let len: usize = shape.iter().product();
        tensors.push(TensorEntry { name, shape, offset });
        offset += len;
    }
    let header = Header {
        config: ckpt.params.config.clone(),
        vocab: ckpt.vocab.clone(),
        metadata: ckpt.metadata.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    ckpt.params.visit("", &mut |_, values, _| {
        for &v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    });
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses and validates a checkpoint. Never panics on malformed input.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(format_err("missing magic"));
    }
    let version = read_u32(bytes, 8);
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let header_len = read_u32(bytes, 12) as usize;
    let rest = &bytes[16..];
    if header_len > rest.len() {
        return Err(format_err("header extends past end of file"));
    }
    let header: Header =
        serde_json::from_slice(&rest[..header_len]).map_err(|e| format_err(format!("header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| format_err(e.to_string()))?;
    if header.vocab.len() != header.config.vocab_size {
        return Err(format_err(format!(
            "vocabulary has {} entries, config says {}",
            header.vocab.len(),
            header.config.vocab_size
        )));
    }
    let payload = &rest[header_len..];
    let count = header.config.parameter_count();
    if count.checked_mul(4) != Some(payload.len()) {
        return Err(format_err(format!(
            "payload holds {} bytes, expected {count} f32 values",
            payload.len()
        )));
    }
    let mut params = ModelParams::zeros(&header.config);
    let expected = params.tensor_index();
    if expected.len() != header.tensors.len() {
        return Err(format_err("tensor index does not match the config"));
    }
    let mut offset = 0;
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name || *shape != entry.shape || entry.offset != offset {
            return Err(format_err(format!("unexpected tensor entry {}", entry.name)));
        }
        offset += shape.iter().product::<usize>();
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let mut finite = true;
    params.visit_mut("", &mut |_, slot, _| {
        for (s, v) in slot.iter_mut().zip(values.by_ref()) {
            finite &= v.is_finite();
            *s = v;
        }
    });
    if !finite {
        return Err(format_err("non-finite parameter"));
    }
    Ok(Checkpoint {
        params,
        vocab: header.vocab,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
