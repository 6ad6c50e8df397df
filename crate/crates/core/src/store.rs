//! Single-file model archive.
//!
//! ```text
//! KGEU1\n
//! {header json}\n                  one line, includes section sizes
//! <vocabulary dump>                `vocab_bytes` bytes
//! <node rows>                      rows × width little-endian f64
//! <TransH normals>                 normal_rows × width little-endian f64
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EmbeddingTable, ModelConfig, ModelKind, Norm, ShareMode};
use crate::train::{AdamParams, Corruption, TrainConfig};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8] = b"KGEU1\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a valid model archive: {0}")]
    Format(String),
    #[error("archive {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("refusing to save a model with non-finite parameters")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub d: usize,
    pub norm_kind: Norm,
    pub unify: bool,
    pub share: ShareMode,
    pub seed: u64,
    pub margin: f64,
    pub regularization: f64,
    pub renorm_shared: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub negatives_per_positive: usize,
    pub corruption: Corruption,
    pub adam: AdamParams,
    pub width: usize,
    pub rows: usize,
    pub normal_rows: usize,
    pub vocab_bytes: usize,
}

impl ArchiveHeader {
    fn new(table: &EmbeddingTable, vocab: &Vocabulary, config: &TrainConfig, vocab_bytes: usize) -> Self {
        let m = &config.model;
        ArchiveHeader {
            format_version: FORMAT_VERSION,
            model_kind: m.kind,
            d: m.dim,
            norm_kind: m.norm,
            unify: vocab.unify(),
            share: m.share,
            seed: config.seed,
            margin: m.margin,
            regularization: m.regularization,
            renorm_shared: m.renorm_shared,
            learning_rate: config.learning_rate,
            epochs: config.epochs,
            batch_size: config.batch_size,
            negatives_per_positive: config.negatives_per_positive,
            corruption: config.corruption,
            adam: config.adam,
            width: table.width(),
            rows: table.rows(),
            normal_rows: table.normal_rows(),
            vocab_bytes,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                kind: self.model_kind,
                dim: self.d,
                norm: self.norm_kind,
                margin: self.margin,
                regularization: self.regularization,
                share: self.share,
                renorm_shared: self.renorm_shared,
            },
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            negatives_per_positive: self.negatives_per_positive,
            corruption: self.corruption,
            adam: self.adam,
            seed: self.seed,
        }
    }
}

/// Serializes the archive to bytes.
pub fn to_bytes(table: &EmbeddingTable, vocab: &Vocabulary, config: &TrainConfig) -> Result<Vec<u8>, StoreError> {
    if !table.is_finite() {
        return Err(StoreError::NonFinite);
    }
    let dump = vocab.dump();
    let header = ArchiveHeader::new(table, vocab, config, dump.len());
    let json = serde_json::to_string(&header).map_err(|e| StoreError::Format(e.to_string()))?;
    let floats = table.node_data().len() + table.normal_data().len();
    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + dump.len() + 8 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(dump.as_bytes());
    for x in table.node_data().iter().chain(table.normal_data()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn save(table: &EmbeddingTable, vocab: &Vocabulary, config: &TrainConfig, path: &Path) -> Result<(), StoreError> {
    let bytes = to_bytes(table, vocab, config)?;
    fs::write(path, bytes).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn from_bytes(bytes: &[u8]) -> Result<(EmbeddingTable, Vocabulary, TrainConfig), StoreError> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| StoreError::Format("missing KGEU1 magic".into()))?;
    let eol = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| StoreError::Format("unterminated header".into()))?;
    let header: ArchiveHeader =
        serde_json::from_slice(&rest[..eol]).map_err(|e| StoreError::Format(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(StoreError::Format(format!("unsupported format version {}", header.format_version)));
    }
    let rest = &rest[eol + 1..];
    if rest.len() < header.vocab_bytes {
        return Err(StoreError::Format("truncated vocabulary section".into()));
    }
    let dump = std::str::from_utf8(&rest[..header.vocab_bytes])
        .map_err(|_| StoreError::Format("vocabulary is not UTF-8".into()))?;
    let vocab = Vocabulary::from_dump(dump, header.unify).map_err(|e| StoreError::Format(e.to_string()))?;
    let config = header.train_config();
    let mut table = EmbeddingTable::zeros(&config.model, &vocab).map_err(|e| StoreError::Format(e.to_string()))?;

    for (what, expected, found) in [
        ("row width", table.width(), header.width),
        ("row count", table.rows(), header.rows),
        ("normal row count", table.normal_rows(), header.normal_rows),
    ] {
        if expected != found {
            return Err(StoreError::DimensionMismatch { what, expected, found });
        }
    }
    let payload = &rest[header.vocab_bytes..];
    let n_nodes = table.node_data().len();
    let n_floats = n_nodes + table.normal_data().len();
    if payload.len() != 8 * n_floats {
        return Err(StoreError::DimensionMismatch {
            what: "payload bytes",
            expected: 8 * n_floats,
            found: payload.len(),
        });
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for x in table.node_data_mut() {
        *x = values.next().expect("length checked");
    }
    for x in table.normal_data_mut() {
        *x = values.next().expect("length checked");
    }
    if !table.is_finite() {
        return Err(StoreError::Format("non-finite parameter in payload".into()));
    }
    Ok((table, vocab, config))
}

pub fn load(path: &Path) -> Result<(EmbeddingTable, Vocabulary, TrainConfig), StoreError> {
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}
