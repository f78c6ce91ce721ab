use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LoraConfig, LoraFactors};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized adapter set: factors per layer name, the fully trained
/// modules, and the hash of the frozen base they were trained against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterCheckpoint {
    pub version: u32,
    pub base_hash: String,
    pub config: LoraConfig,
    pub factors: BTreeMap<String, LoraFactors>,
    #[serde(default)]
    pub saved: BTreeMap<String, Tensor>,
}

impl AdapterCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("checkpoint is plain data")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ck: AdapterCheckpoint =
            serde_json::from_slice(bytes).map_err(|e| Error::Data(format!("adapter checkpoint: {e}")))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint and refuses it unless it was trained against the
    /// base identified by `expected_base_hash`.
    pub fn read(path: &Path, expected_base_hash: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck = Self::from_bytes(&bytes)?;
        ck.check_base(expected_base_hash)?;
        Ok(ck)
    }

    pub fn check_base(&self, expected_base_hash: &str) -> Result<()> {
        if self.base_hash != expected_base_hash {
            return Err(Error::Config(format!(
                "adapter was trained against base {} but the model base is {}",
                self.base_hash, expected_base_hash
            )));
        }
        Ok(())
    }
}
