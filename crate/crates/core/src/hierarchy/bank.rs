use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Label, Level};
use crate::error::{Error, Result};
use crate::lora::LoraConfig;
use crate::model::{AdapterSet, Model};

/// Whether child levels get one adapter each or one per parent label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    #[default]
    PerLevel,
    PerParent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteMode {
    /// Routes on the gold parent.
    Train,
    /// Routes on the predicted parent.
    Infer,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Route {
    Adapter(String),
    ShortCircuit,
}

/// Adapter sets keyed by routing key: `level1`, `level2`, `level3` in
/// per-level mode; `level2/SEXIST`, `level3/DIRECT`, ... in per-parent mode.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterBank {
    granularity: Granularity,
    entries: BTreeMap<String, AdapterSet>,
}

/// Parents that can route to `level` in per-parent mode.
fn parents(level: Level) -> &'static [Label] {
    match level.get() {
        1 => &[],
        2 => &[Label::Sexist],
        _ => Level::TWO.labels(),
    }
}

pub fn route_key(granularity: Granularity, level: Level, parent: Option<Label>) -> String {
    match (granularity, level.get(), parent) {
        (Granularity::PerParent, 2 | 3, Some(p)) => format!("level{level}/{p}"),
        _ => format!("level{level}"),
    }
}

impl AdapterBank {
    pub fn empty(granularity: Granularity) -> Self {
        AdapterBank {
            granularity,
            entries: BTreeMap::new(),
        }
    }

    /// Fresh adapter sets for every routing key. Entry seeds are offset from
    /// `cfg.seed` so no two entries share initial factors.
    pub fn init(model: &Model, cfg: &LoraConfig, granularity: Granularity, with_saved: bool) -> Result<Self> {
        let mut bank = AdapterBank::empty(granularity);
        for key in bank.expected_keys() {
            let entry_cfg = LoraConfig {
                seed: cfg.seed.wrapping_add(bank.entries.len() as u64),
                ..cfg.clone()
            };
            let set = model.new_adapter_set(&key, &entry_cfg, with_saved)?;
            bank.entries.insert(key, set);
        }
        Ok(bank)
    }

    pub fn expected_keys(&self) -> Vec<String> {
        let mut keys = vec![route_key(self.granularity, Level::ONE, None)];
        for level in [Level::TWO, Level::THREE] {
            match self.granularity {
                Granularity::PerLevel => keys.push(route_key(self.granularity, level, None)),
                Granularity::PerParent => keys.extend(
                    parents(level)
                        .iter()
                        .map(|&p| route_key(self.granularity, level, Some(p))),
                ),
            }
        }
        keys
    }

    /// Routing keys serving `level`.
    pub fn keys_for(&self, level: Level) -> Vec<String> {
        self.expected_keys()
            .into_iter()
            .filter(|k| k.starts_with(&format!("level{level}")))
            .collect()
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&AdapterSet> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &AdapterSet)> {
        self.entries.iter()
    }

    pub fn insert(&mut self, key: impl Into<String>, set: AdapterSet) -> Option<AdapterSet> {
        self.entries.insert(key.into(), set)
    }

    pub fn take(&mut self, key: &str) -> Result<AdapterSet> {
        self.entries
            .remove(key)
            .ok_or_else(|| Error::Config(format!("adapter bank has no entry {key:?}")))
    }

    /// Selects the adapter for `level`. Level 1 always routes to its single
    /// entry; deeper levels short-circuit under a NOT_SEXIST parent.
    pub fn route(
        &self,
        level: Level,
        parent: Option<Label>,
        mode: RouteMode,
        gold_parent: Option<Label>,
    ) -> Result<Route> {
        let key = if level == Level::ONE {
            route_key(self.granularity, level, None)
        } else {
            let parent = match mode {
                RouteMode::Train => {
                    gold_parent.ok_or_else(|| Error::Contract("training routes need the gold parent".into()))?
                }
                RouteMode::Infer => {
                    parent.ok_or_else(|| Error::Contract(format!("level {level} routing needs a parent")))?
                }
            };
            if parent == Label::NotSexist {
                return Ok(Route::ShortCircuit);
            }
            route_key(self.granularity, level, Some(parent))
        };
        if self.entries.contains_key(&key) {
            Ok(Route::Adapter(key))
        } else {
            Err(Error::Config(format!("adapter bank has no entry {key:?}")))
        }
    }

    /// Attaches entry `key`, runs `f`, and puts the entry back even when
    /// `f` fails.
    pub fn with_adapter<T>(
        &mut self,
        model: &mut Model,
        key: &str,
        f: impl FnOnce(&mut Model) -> Result<T>,
    ) -> Result<T> {
        let set = self.take(key)?;
        if let Some(prev) = model.attach(set)? {
            model.detach();
            return Err(Error::State(format!("model already carried adapter {:?}", prev.name)));
        }
        let out = f(model);
        let set = model.detach().expect("attached above");
        self.entries.insert(key.to_string(), set);
        out
    }

    pub fn n_params(&self) -> usize {
        self.entries.values().map(AdapterSet::n_params).sum()
    }
}

const BANK_VERSION: u32 = 1;

/// Serialized bank with the hash of the base it was trained against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankCheckpoint {
    pub version: u32,
    pub base_hash: String,
    pub granularity: Granularity,
    pub entries: BTreeMap<String, AdapterSet>,
}

impl BankCheckpoint {
    pub fn new(bank: &AdapterBank, base_hash: &str) -> Self {
        BankCheckpoint {
            version: BANK_VERSION,
            base_hash: base_hash.to_string(),
            granularity: bank.granularity,
            entries: bank.entries.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("bank is plain data")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads a bank, refusing it unless it was trained against `base_hash`.
    pub fn read(path: &Path, base_hash: &str) -> Result<AdapterBank> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: BankCheckpoint =
            serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if ck.version != BANK_VERSION {
            return Err(Error::Data(format!("unsupported bank version {}", ck.version)));
        }
        if ck.base_hash != base_hash {
            return Err(Error::Config(format!(
                "adapters in {} were trained against base {} but the model base is {base_hash}",
                path.display(),
                ck.base_hash
            )));
        }
        Ok(AdapterBank {
            granularity: ck.granularity,
            entries: ck.entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenizer::MIN_VOCAB;
    use crate::model::ModelConfig;

    fn model() -> Model {
        let cfg = ModelConfig {
            vocab_size: MIN_VOCAB,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 8,
            max_seq: 16,
            ..ModelConfig::default()
        };
        Model::build(&cfg, 0).unwrap()
    }

    fn lora() -> LoraConfig {
        LoraConfig {
            rank: 2,
            alpha: 2.0,
            ..LoraConfig::default()
        }
    }

    #[test]
    fn not_sexist_parent_short_circuits() {
        let bank = AdapterBank::init(&model(), &lora(), Granularity::PerLevel, false).unwrap();
        let r = bank
            .route(Level::TWO, Some(Label::NotSexist), RouteMode::Infer, None)
            .unwrap();
        assert_eq!(r, Route::ShortCircuit);
        let r = bank
            .route(Level::THREE, None, RouteMode::Train, Some(Label::NotSexist))
            .unwrap();
        assert_eq!(r, Route::ShortCircuit);
    }

    #[test]
    fn gold_parent_routes_training() {
        let bank = AdapterBank::init(&model(), &lora(), Granularity::PerLevel, false).unwrap();
        let r = bank.route(
            Level::TWO,
            Some(Label::NotSexist),
            RouteMode::Train,
            Some(Label::Sexist),
        );
        assert_eq!(r.unwrap(), Route::Adapter("level2".into()));
        assert!(matches!(
            bank.route(Level::TWO, Some(Label::Sexist), RouteMode::Train, None),
            Err(Error::Contract(_))
        ));
        assert_eq!(
            bank.route(Level::ONE, None, RouteMode::Infer, None).unwrap(),
            Route::Adapter("level1".into())
        );
    }

    #[test]
    fn per_level_ignores_the_parent() {
        let bank = AdapterBank::init(&model(), &lora(), Granularity::PerLevel, false).unwrap();
        assert_eq!(bank.len(), 3);
        let a = bank
            .route(Level::TWO, Some(Label::Direct), RouteMode::Infer, None)
            .unwrap();
        let b = bank
            .route(Level::TWO, Some(Label::Judgemental), RouteMode::Infer, None)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a, Route::Adapter("level2".into()));
        for parent in Level::TWO.labels() {
            let r = bank.route(Level::THREE, Some(*parent), RouteMode::Infer, None).unwrap();
            assert_eq!(r, Route::Adapter("level3".into()));
        }
    }

    #[test]
    fn per_parent_keys_by_parent() {
        let bank = AdapterBank::init(&model(), &lora(), Granularity::PerParent, false).unwrap();
        assert_eq!(bank.len(), 1 + 1 + 3);
        let a = bank
            .route(Level::THREE, Some(Label::Direct), RouteMode::Infer, None)
            .unwrap();
        let b = bank
            .route(Level::THREE, Some(Label::Reported), RouteMode::Infer, None)
            .unwrap();
        assert_ne!(a, b);
        assert_eq!(a, Route::Adapter("level3/DIRECT".into()));
        assert_ne!(
            bank.get("level3/DIRECT").unwrap().factors,
            bank.get("level3/REPORTED").unwrap().factors
        );
        assert_eq!(bank.keys_for(Level::THREE).len(), 3);
    }

    #[test]
    fn missing_entry_is_a_config_error() {
        let mut bank = AdapterBank::init(&model(), &lora(), Granularity::PerLevel, false).unwrap();
        bank.take("level2").unwrap();
        assert!(matches!(
            bank.route(Level::TWO, Some(Label::Sexist), RouteMode::Infer, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn with_adapter_returns_the_entry() {
        let mut m = model();
        let mut bank = AdapterBank::init(&m, &lora(), Granularity::PerLevel, true).unwrap();
        let before = bank.clone();
        let name = bank
            .with_adapter(&mut m, "level2", |m| Ok(m.active_name().unwrap().to_string()))
            .unwrap();
        assert_eq!(name, "level2");
        assert_eq!(bank, before);
        assert!(m.active_name().is_none());
        let err = bank.with_adapter(&mut m, "level1", |_| -> Result<()> { Err(Error::Numeric("x".into())) });
        assert!(err.is_err());
        assert_eq!(bank, before);
    }

    #[test]
    fn checkpoint_checks_the_base() {
        let m = model();
        let bank = AdapterBank::init(&m, &lora(), Granularity::PerParent, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        BankCheckpoint::new(&bank, &m.base_hash()).write(&path).unwrap();
        assert_eq!(BankCheckpoint::read(&path, &m.base_hash()).unwrap(), bank);
        assert!(matches!(BankCheckpoint::read(&path, "beef"), Err(Error::Config(_))));
    }
}
