//! Versioned model checkpoints.
//!
//! A checkpoint is one JSON document mapping parameter names to shape plus
//! flat values, with optional optimizer moments and an `extra` slot for
//! model-level metadata (config, vocabulary). Values round-trip bit-exactly:
//! the JSON encoder writes shortest-round-trip f64 literals.

use super::{OptimizerState, Params, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {source}")]
    Malformed {
        path: String,
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    params: BTreeMap<String, TensorRecord>,
    #[serde(default)]
    optimizer: Option<OptimizerState>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// In-memory checkpoint contents.
#[derive(Debug)]
pub struct Checkpoint {
    pub params: Params,
    pub optimizer: Option<OptimizerState>,
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(
    path: &Path,
    params: &Params,
    optimizer: Option<&OptimizerState>,
    extra: serde_json::Value,
) -> Result<(), CheckpointError> {
    let mut records = BTreeMap::new();
    for p in params.iter() {
        records.insert(
            p.name.clone(),
            TensorRecord {
                shape: p.value.shape().to_vec(),
                values: p.value.data().to_vec(),
            },
        );
    }
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        params: records,
        optimizer: optimizer.cloned(),
        extra,
    };
    let body = serde_json::to_string(&file).expect("checkpoint serializes");
    write_atomic(path, body.as_bytes()).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let body = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: CheckpointFile =
        serde_json::from_str(&body).map_err(|source| CheckpointError::Malformed {
            path: path.display().to_string(),
            source,
        })?;
    if file.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: file.version,
        });
    }
    let mut params = Params::new();
    for (name, rec) in file.params {
        params.insert(name, Tensor::from_vec(&rec.shape, rec.values)?);
    }
    Ok(Checkpoint {
        params,
        optimizer: file.optimizer,
        extra: file.extra,
    })
}

/// Write via a sibling temp file and rename, so readers never observe a
/// partially written document.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
