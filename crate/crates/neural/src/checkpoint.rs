//! Versioned binary checkpoints: an 8-byte magic, a little-endian `u32`
//! format version, then a bincode payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::model::{validate_adapters, BaseWeights, LoraAdapter};

pub const MAGIC: &[u8; 8] = b"TBNNCKPT";
pub const VERSION: u32 = 1;

/// Everything needed to rebuild a fine-tuned classifier. The transformer
/// configuration and head live inside `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub base: BaseWeights,
    pub adapters: Vec<LoraAdapter>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = bincode::serialize(self).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(12 + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(NeuralError::Checkpoint("missing magic header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes"));
        if version != VERSION {
            return Err(NeuralError::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let ck: Checkpoint = bincode::deserialize(&bytes[12..]).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        ck.base.config.validate()?;
        validate_adapters(&ck.base, &ck.adapters)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|source| NeuralError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| NeuralError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
