use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Block, Model, ModelConfig, BLOCK_TARGETS};
use crate::error::{Error, Result};
use crate::lora::{AdaptedLinear, BaseStorage, QuantizedMatrix, TargetModule};
use crate::numerics::Tensor;

const MODEL_CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LinearPayload {
    Plain(Tensor),
    Quantized(QuantizedMatrix),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredBlock {
    attn_norm: Tensor,
    ffn_norm: Tensor,
    linears: Vec<LinearPayload>,
}

/// Full base model: config, every matrix, and the base hash. Adapters are
/// stored separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    version: u32,
    pub base_hash: String,
    pub config: ModelConfig,
    pub seed: u64,
    embed: Tensor,
    pos: Tensor,
    blocks: Vec<StoredBlock>,
    final_norm: Tensor,
    lm_head: Tensor,
}

fn payload(l: &AdaptedLinear) -> LinearPayload {
    match l.storage() {
        BaseStorage::Plain => LinearPayload::Plain(l.weight().clone()),
        BaseStorage::Quantized(q) => LinearPayload::Quantized(q.clone()),
    }
}

fn restore(name: TargetModule, p: LinearPayload) -> Result<AdaptedLinear> {
    match p {
        LinearPayload::Plain(w) => AdaptedLinear::plain(name, w),
        LinearPayload::Quantized(q) => Ok(AdaptedLinear::from_quantized(name, q)),
    }
}

impl ModelCheckpoint {
    pub fn from_model(model: &Model) -> Self {
        ModelCheckpoint {
            version: MODEL_CHECKPOINT_VERSION,
            base_hash: model.base_hash(),
            config: model.cfg.clone(),
            seed: model.seed,
            embed: model.embed.clone(),
            pos: model.pos.clone(),
            blocks: model
                .blocks
                .iter()
                .map(|b| StoredBlock {
                    attn_norm: b.attn_norm.clone(),
                    ffn_norm: b.ffn_norm.clone(),
                    linears: b.linears.iter().map(payload).collect(),
                })
                .collect(),
            final_norm: model.final_norm.clone(),
            lm_head: model.lm_head.weight().clone(),
        }
    }

    /// Rebuilds the model and verifies the stored hash.
    pub fn into_model(self) -> Result<Model> {
        if self.version != MODEL_CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported model checkpoint version {}",
                self.version
            )));
        }
        self.config.validate()?;
        if self.blocks.len() != self.config.n_layers {
            return Err(Error::Data("model checkpoint layer count disagrees with config".into()));
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in self.blocks {
            if b.linears.len() != BLOCK_TARGETS.len() {
                return Err(Error::Data("model checkpoint block is missing linears".into()));
            }
            let linears = BLOCK_TARGETS
                .iter()
                .zip(b.linears)
                .map(|(&t, p)| restore(t, p))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(Block {
                attn_norm: b.attn_norm,
                ffn_norm: b.ffn_norm,
                linears,
            });
        }
        let model = Model {
            cfg: self.config,
            seed: self.seed,
            embed: self.embed,
            pos: self.pos,
            blocks,
            final_norm: self.final_norm,
            lm_head: AdaptedLinear::plain(TargetModule::LmHead, self.lm_head)?,
            active: None,
        };
        let hash = model.base_hash();
        if hash != self.base_hash {
            return Err(Error::Data(format!(
                "model checkpoint hash {} does not match its contents ({hash})",
                self.base_hash
            )));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("checkpoint is plain data")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Data(format!("model checkpoint: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
