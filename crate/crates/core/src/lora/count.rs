use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::LoraConfig;
use crate::error::{Error, Result};

/// One weight matrix of a model listing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchEntry {
    /// Instance name, e.g. `layers.0.q_proj`.
    pub name: String,
    /// Module kind shared by all instances, e.g. `q_proj` or `embed_tokens`.
    pub tag: String,
    pub d_out: usize,
    pub d_in: usize,
    /// Carries a LoRA adapter.
    pub adapted: bool,
}

impl ArchEntry {
    pub fn new(name: impl Into<String>, tag: &str, d_out: usize, d_in: usize, adapted: bool) -> Self {
        ArchEntry {
            name: name.into(),
            tag: tag.to_string(),
            d_out,
            d_in,
            adapted,
        }
    }

    pub fn size(&self) -> usize {
        self.d_out * self.d_in
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainableCount {
    pub lora_params: usize,
    pub saved_params: usize,
    /// Parameters of the base model listing (adapters excluded).
    pub total_params: usize,
    pub trainable_fraction: f64,
}

/// `Σ r·(d_in + d_out)` over adapted entries, for any rank including 0.
pub fn lora_params_for_rank(arch: &[ArchEntry], rank: usize) -> usize {
    arch.iter()
        .filter(|e| e.adapted)
        .map(|e| rank * (e.d_in + e.d_out))
        .sum()
}

pub fn count_trainable(arch: &[ArchEntry], cfg: &LoraConfig, modules_to_save: &[&str]) -> Result<TrainableCount> {
    if arch.is_empty() {
        return Err(Error::Config("empty architecture listing".into()));
    }
    cfg.validate()?;
    let tags: BTreeSet<&str> = arch.iter().map(|e| e.tag.as_str()).collect();
    if let Some(unknown) = modules_to_save.iter().find(|m| !tags.contains(**m)) {
        return Err(Error::Config(format!(
            "modules_to_save names unknown module {unknown:?}"
        )));
    }
    let lora_params = lora_params_for_rank(arch, cfg.rank);
    let saved_params = arch
        .iter()
        .filter(|e| modules_to_save.contains(&e.tag.as_str()))
        .map(ArchEntry::size)
        .sum();
    let total_params: usize = arch.iter().map(ArchEntry::size).sum();
    Ok(TrainableCount {
        lora_params,
        saved_params,
        total_params,
        trainable_fraction: (lora_params + saved_params) as f64 / total_params as f64,
    })
}
