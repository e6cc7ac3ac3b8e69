//! Model checkpoints: a JSON header describing the architecture followed by
//! every weight as a little-endian `f32`, in layout order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Backbone, BackboneConfig, EmbeddingSource};
use super::params::ParamEntry;
use crate::container::{decode, encode, payload_f32, read_file, write_file};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RFDCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: BackboneConfig,
    pub class_count: usize,
    pub embedding_dim: usize,
    pub source: EmbeddingSource,
    pub params: Vec<ParamEntry>,
}

/// A loaded network with the hash of the bytes it came from.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Backbone,
    pub sha256: String,
}

impl Checkpoint {
    pub fn to_bytes(model: &Backbone) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            config: model.config.clone(),
            class_count: model.class_count,
            embedding_dim: model.embedding_dim(),
            source: model.source,
            params: model.layout.entries.clone(),
        };
        encode(MAGIC, VERSION, &header, &model.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (CheckpointHeader, _) = decode(MAGIC, VERSION, bytes)?;
        let mut model = Backbone::zeroed(header.config.clone(), header.class_count, header.source)?;
        if model.layout.entries != header.params || model.embedding_dim() != header.embedding_dim {
            return Err(Error::Malformed("checkpoint parameter list does not match its architecture".into()));
        }
        let params = payload_f32("checkpoint weights", payload, model.param_count())?;
        model.set_params(params)?;
        Ok(Checkpoint {
            model,
            sha256: sha256_hex(bytes),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `model` to `path`; returns the file's SHA-256.
pub fn write_checkpoint(model: &Backbone, path: &Path) -> Result<String> {
    let bytes = Checkpoint::to_bytes(model)?;
    write_file(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read_file(path)?)
}
