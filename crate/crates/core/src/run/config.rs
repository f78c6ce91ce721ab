use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::evaluation::PipelineSetup;
use crate::hierarchy::{Granularity, HierLossConfig};
use crate::lora::LoraConfig;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyConfig {
    #[serde(flatten)]
    pub loss: HierLossConfig,
    pub granularity: Granularity,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            loss: HierLossConfig::default(),
            granularity: Granularity::PerLevel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// JSONL splits on disk; `test` is optional.
    Files {
        train: PathBuf,
        dev: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
    },
    Synth(SynthConfig),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Seeds of the joint-vs-separate and lambda harnesses.
    pub seeds: Vec<u64>,
    pub ranks: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// Train the rank ablation models; otherwise only count parameters.
    pub rank_train: bool,
    /// Size training runs in passes over the training set instead of
    /// `train.max_steps`.
    pub epochs: Option<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            seeds: (0..5).collect(),
            ranks: vec![8, 16, 32, 64],
            lambdas: vec![0.0, 0.1],
            rank_train: true,
            epochs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Required; nothing is seeded from the clock.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub lora: LoraConfig,
    /// Train modules-to-save alongside the LoRA factors.
    pub save_modules: bool,
    /// `lambda` lives under `hierarchy`, not here.
    pub train: TrainConfig,
    pub hierarchy: HierarchyConfig,
    pub data: DataSource,
    pub ablation: AblationConfig,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: None,
            model: ModelConfig::default(),
            lora: LoraConfig::default(),
            save_modules: true,
            train: TrainConfig::default(),
            hierarchy: HierarchyConfig::default(),
            data: DataSource::default(),
            ablation: AblationConfig::default(),
            out: None,
        }
    }
}

/// Default tree that file contents and overrides are merged into. Every
/// key in it is a valid config key.
fn default_tree() -> Value {
    RunConfig::default().to_value()
}

fn merge(dst: &mut Value, src: Value, path: &str) -> Result<()> {
    let Value::Object(src) = src else {
        *dst = src;
        return Ok(());
    };
    let replace = path == "data" || !dst.is_object();
    if replace {
        *dst = Value::Object(src);
        return Ok(());
    }
    let dst = dst.as_object_mut().expect("checked above");
    for (k, v) in src {
        let sub = if path.is_empty() {
            k.clone()
        } else {
            format!("{path}.{k}")
        };
        match dst.get_mut(&k) {
            Some(slot) => merge(slot, v, &sub)?,
            None => return Err(Error::Config(format!("unknown config key {sub:?}"))),
        }
    }
    Ok(())
}

/// Sets `key` (dotted path) to `raw`, read as JSON when it parses and as a
/// string otherwise. Only existing scalar or list fields can be set.
fn set_override(tree: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut slot = &mut *tree;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
    }
    if slot.is_object() {
        return Err(Error::Config(format!("{key:?} is a section; set its fields instead")));
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// A `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(Error::Config(format!("override {s:?} is not of the form key=value"))),
    }
}

impl RunConfig {
    /// Defaults, then the file, then overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut tree = default_tree();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let v: Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            match v.get("schema_version").and_then(Value::as_u64) {
                Some(n) if n == SCHEMA_VERSION as u64 => {}
                Some(n) => {
                    return Err(Error::Config(format!(
                        "{}: schema_version {n} is not supported (expected {SCHEMA_VERSION})",
                        path.display()
                    )))
                }
                None => return Err(Error::Config(format!("{}: missing schema_version", path.display()))),
            }
            merge(&mut tree, v, "")?;
            // Fill defaults inside replaced sections so overrides can reach them.
            let filled: RunConfig = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
            tree = filled.to_value();
        }
        for (k, v) in overrides {
            set_override(&mut tree, k, v)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.lambda = cfg.hierarchy.loss.lambda;
        Ok(cfg)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("seed is required (set it in the config or pass --seed)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.model.validate()?;
        self.lora.validate()?;
        self.train.validate()?;
        self.hierarchy.loss.validate()?;
        match &self.data {
            DataSource::Synth(s) => s.validate()?,
            DataSource::Files { train, dev, test } => {
                for p in [Some(train), Some(dev), test.as_ref()].into_iter().flatten() {
                    if !p.is_file() {
                        return Err(Error::Config(format!("dataset {} does not exist", p.display())));
                    }
                }
            }
        }
        Ok(())
    }

    /// Output directory, taking `flag` over the config value.
    pub fn out_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out.clone())
            .ok_or_else(|| Error::Config("no output directory (set out or pass --out)".into()))
    }

    pub fn synth(&self) -> Result<&SynthConfig> {
        match &self.data {
            DataSource::Synth(s) => Ok(s),
            DataSource::Files { .. } => Err(Error::Config("this command needs a synth data source".into())),
        }
    }

    pub fn setup(&self) -> PipelineSetup {
        PipelineSetup {
            model: self.model.clone(),
            lora: self.lora.clone(),
            train: TrainConfig {
                lambda: self.hierarchy.loss.lambda,
                ..self.train.clone()
            },
            granularity: self.hierarchy.granularity,
            save_modules: self.save_modules,
            epochs: self.ablation.epochs,
        }
    }

    /// The resolved config in file form; it resolves back to itself.
    pub fn to_value(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["train"].as_object_mut().expect("object").remove("lambda");
        v
    }

    /// SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_value().to_string()))
    }
}
