//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `CWTMCKPT`, a little-endian `u32` format
//! version, a `u64` header length, a JSON header, then every tensor as
//! row-major little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CwtmModel, TrainConfig};
use crate::backbone::{Backbone, BackboneConfig, BackboneMode, EmbeddingCache, ToyBackbone, Vocab};
use crate::error::{CwtmError, Result};
use crate::nn::{ParamGroup, ParamStore};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"CWTMCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    group: ParamGroup,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    train: TrainConfig,
    backbone: BackboneConfig,
    vocab: Option<Vocab>,
    frozen: Vec<ParamGroup>,
    tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> CwtmError {
    CwtmError::Checkpoint(msg.into())
}

impl CwtmModel {
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let store = self.store();
        let header = Header {
            train: self.config().clone(),
            backbone: self.backbone_config().clone(),
            vocab: self.backbone().vocab().cloned(),
            frozen: ParamGroup::ALL.into_iter().filter(|g| store.is_frozen(*g)).collect(),
            tensors: store
                .iter()
                .map(|(_, p)| TensorEntry {
                    name: p.name.clone(),
                    group: p.group,
                    rows: p.value().rows(),
                    cols: p.value().cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let floats: usize = store.iter().map(|(_, p)| p.value().len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in store.iter() {
            for v in p.value().data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Rebuilds a model. Cached-mode checkpoints carry no embeddings, so the
    /// cache they were trained with has to be supplied again.
    pub fn from_checkpoint_bytes(bytes: &[u8], cache: Option<EmbeddingCache>) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a CWTM checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported format version {version}, expected {VERSION}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let body = &bytes[20..];
        let header_len = usize::try_from(header_len).ok().filter(|&n| n <= body.len()).ok_or_else(|| bad("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&body[..header_len]).map_err(|e| bad(format!("header: {e}")))?;
        let mut data = &body[header_len..];

        let mut store = ParamStore::new();
        for t in &header.tensors {
            let n = t.rows.checked_mul(t.cols).ok_or_else(|| bad(format!("tensor '{}' is too large", t.name)))?;
            if data.len() < 8 * n {
                return Err(bad(format!("truncated data for tensor '{}'", t.name)));
            }
            let (chunk, rest) = data.split_at(8 * n);
            let values = chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            if store.find(&t.name).is_some() {
                return Err(bad(format!("duplicate tensor '{}'", t.name)));
            }
            store.add(t.name.clone(), t.group, Matrix::from_vec(t.rows, t.cols, values));
            data = rest;
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes", data.len())));
        }
        for g in &header.frozen {
            store.set_frozen(*g, true);
        }

        let backbone = match (header.backbone.mode, cache) {
            (BackboneMode::Toy, _) => {
                let vocab = header.vocab.ok_or_else(|| bad("toy checkpoint without vocabulary"))?;
                Backbone::Toy(ToyBackbone::bind(&store, &header.backbone, vocab)?)
            }
            (BackboneMode::Cached, Some(cache)) => {
                if cache.dim() != header.backbone.dim {
                    return Err(CwtmError::Shape(format!(
                        "cache width {} does not match the checkpoint's {}",
                        cache.dim(),
                        header.backbone.dim
                    )));
                }
                Backbone::Cached(cache)
            }
            (BackboneMode::Cached, None) => return Err(CwtmError::Config("cached-mode checkpoint needs its embedding cache".into())),
        };
        CwtmModel::from_parts(store, backbone, header.backbone, header.train)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()?).map_err(|e| CwtmError::io(path, e))
    }

    pub fn load(path: &Path, cache: Option<EmbeddingCache>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CwtmError::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes, cache)
    }
}
