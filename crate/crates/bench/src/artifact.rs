//! Per-cell model files: an 8-byte magic, a little-endian `u32` version and
//! a bincode payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{BenchError, Result};
use crate::pipeline::FittedModel;

pub const MAGIC: &[u8; 8] = b"TBMODEL\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub method: Method,
    pub scenario: String,
    pub seed: u64,
    pub upsampled: bool,
    pub threshold: f64,
    pub model: FittedModel,
}

impl Artifact {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = bincode::serialize(self).map_err(|e| BenchError::Artifact(e.to_string()))?;
        let mut out = Vec::with_capacity(12 + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(BenchError::Artifact("not a model file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes"));
        if version != VERSION {
            return Err(BenchError::Artifact(format!("unsupported version {version}, expected {VERSION}")));
        }
        let mut a: Artifact = bincode::deserialize(&bytes[12..]).map_err(|e| BenchError::Artifact(e.to_string()))?;
        a.model.reindex();
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| BenchError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
