//! Command implementations behind the `hiero-lora` binary: config
//! resolution, artifact layout, run manifests and exit codes.
//!
//! Every command writes under its output directory and finishes with a
//! `run_manifest.json` recording the resolved config, its hash, the seed,
//! the tool version and the SHA-256 of every artifact.

mod config;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use config::{parse_override, AblationConfig, DataSource, HierarchyConfig, RunConfig, SCHEMA_VERSION};

use crate::data::{parse_dataset, write_corpus, Instance};
use crate::error::{Error, Result};
use crate::evaluation::{
    ablate_joint_vs_separate, ablate_lambda, ablate_rank, efficiency_report, evaluate_predictions, run_pipeline,
    IcmConfig, Metric,
};
use crate::hierarchy::{predict_dataset, read_records, write_records, BankCheckpoint, Label, LabelRecord};
use crate::model::Model;
use crate::training::{StopReason, TrainLog};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "HIERO_LORA_THREADS";

/// 0 success, 2 configuration or data problems, 3 numeric failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

/// Sizes the global worker pool from `HIERO_LORA_THREADS` (default 1).
/// Returns the pool size in effect.
pub fn configure_threads() -> Result<usize> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {s:?}")))?,
        Err(_) => 1,
    };
    // A pool built earlier in the process stays in place.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(rayon::current_num_threads())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub config: Option<Value>,
    pub base_hash: Option<String>,
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    fn new(command: &str, cfg: Option<&RunConfig>) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            schema_version: SCHEMA_VERSION,
            seed: cfg.and_then(|c| c.seed),
            config_hash: cfg.map(RunConfig::hash),
            config: cfg.map(RunConfig::to_value),
            base_hash: None,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn artifact(&self, file: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.file == file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn describe(path: &Path, name: String) -> Result<Artifact> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Artifact {
        file: name,
        bytes: bytes.len(),
        sha256: digest(&bytes),
    })
}

/// Writes artifacts relative to one output directory and records them.
struct Outputs {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Outputs {
    fn create(dir: PathBuf, manifest: RunManifest) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Outputs { dir, manifest })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(name)?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let body = serde_json::to_string_pretty(value).expect("artifact is plain data") + "\n";
        self.write(name, body.as_bytes())
    }

    /// Records a file some other writer put under the output directory.
    fn record(&mut self, name: &str) -> Result<()> {
        let a = describe(&self.path(name), name.to_string())?;
        self.manifest.artifacts.retain(|x| x.file != name);
        self.manifest.artifacts.push(a);
        Ok(())
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let a = describe(path, path.display().to_string())?;
        self.manifest.inputs.push(a);
        Ok(())
    }

    fn finish(self) -> Result<RunManifest> {
        let path = self.path("run_manifest.json");
        let body = serde_json::to_string_pretty(&self.manifest).expect("manifest is plain data") + "\n";
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

struct Splits {
    train: Vec<Instance>,
    dev: Vec<Instance>,
    test: Option<Vec<Instance>>,
}

fn load_splits(cfg: &RunConfig, out: &mut Outputs) -> Result<Splits> {
    match &cfg.data {
        DataSource::Synth(s) => {
            let c = crate::data::gen_synthetic(s)?;
            Ok(Splits {
                train: c.train,
                dev: c.dev,
                test: Some(c.test),
            })
        }
        DataSource::Files { train, dev, test } => {
            for p in [Some(train), Some(dev), test.as_ref()].into_iter().flatten() {
                out.input(p)?;
            }
            Ok(Splits {
                train: parse_dataset(train)?,
                dev: parse_dataset(dev)?,
                test: test.as_deref().map(parse_dataset).transpose()?,
            })
        }
    }
}

/// Writes the synthetic corpus splits and their manifest.
pub fn cmd_gen_data(cfg: &RunConfig, out: Option<&Path>) -> Result<String> {
    cfg.validate()?;
    let synth = cfg.synth()?;
    let mut outputs = Outputs::create(cfg.out_dir(out)?, RunManifest::new("gen-data", Some(cfg)))?;
    let corpus = write_corpus(&outputs.dir, synth)?;
    for s in &corpus.splits {
        outputs.record(&s.file)?;
    }
    outputs.record("manifest.json")?;
    let dir = outputs.dir.display().to_string();
    outputs.finish()?;
    let counts: Vec<String> = corpus
        .splits
        .iter()
        .map(|s| format!("{} {}", s.split, s.instances))
        .collect();
    Ok(format!("wrote {} to {dir}\n", counts.join(", ")))
}

/// Best evaluation of one trained adapter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub key: String,
    pub file: String,
    pub best_step: Option<usize>,
    pub best_macro_f1: Option<f64>,
    pub steps: usize,
    pub stop_reason: Option<StopReason>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestMarker {
    pub checkpoint: String,
    pub base_hash: String,
    pub adapters: Vec<BestEntry>,
}

fn adapter_file(key: &str) -> String {
    format!("adapters/{key}.json")
}

/// Trains all three levels and writes the adapter bank, one checkpoint per
/// adapter, the best-model marker, the training log and an efficiency
/// report.
pub fn cmd_train(cfg: &RunConfig, out: Option<&Path>) -> Result<String> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let mut outputs = Outputs::create(cfg.out_dir(out)?, RunManifest::new("train", Some(cfg)))?;
    let splits = load_splits(cfg, &mut outputs)?;
    let started = std::time::Instant::now();
    let mut p = run_pipeline(&cfg.setup(), seed, &splits.train, &splits.dev)?;
    let elapsed = started.elapsed().as_secs_f64();
    let hash = p.model.base_hash();
    outputs.manifest.base_hash = Some(hash.clone());

    outputs.write("bank.json", &BankCheckpoint::new(&p.bank, &hash).to_bytes())?;
    let mut best = Vec::new();
    for (key, set) in p.bank.entries() {
        let file = adapter_file(key);
        outputs.write(&file, &set.checkpoint(&hash).to_bytes())?;
        let log = p.logs.iter().find(|l| &l.key == key);
        let stop = log.and_then(TrainLog::stop);
        best.push(BestEntry {
            key: key.clone(),
            file,
            best_step: stop.and_then(|s| s.1),
            best_macro_f1: log.and_then(TrainLog::best_macro_f1),
            steps: log.map_or(0, TrainLog::steps),
            stop_reason: stop.map(|s| s.0),
        });
    }
    outputs.write_json(
        "best.json",
        &BestMarker {
            checkpoint: "bank.json".into(),
            base_hash: hash,
            adapters: best,
        },
    )?;
    let log: String = p.logs.iter().map(TrainLog::to_jsonl).collect();
    outputs.write("train_log.jsonl", log.as_bytes())?;
    outputs.write_json("efficiency.json", &efficiency_report(&p.model, &p.bank)?)?;

    let mut summary = String::new();
    for l in &p.logs {
        let f1 = l.best_macro_f1().map_or_else(|| "-".to_string(), |f| format!("{f:.4}"));
        summary.push_str(&format!(
            "{:<22} steps {:>5}  best dev macro-F1 {f1}\n",
            l.key,
            l.steps()
        ));
    }
    if let Some(test) = &splits.test {
        let preds = p.predict(test, false)?;
        let records: Vec<LabelRecord> = preds.iter().zip(test).map(|(p, g)| p.record(&g.id)).collect();
        let path = outputs.path("test_predictions.jsonl");
        write_records(&path, &records)?;
        outputs.record("test_predictions.jsonl")?;
    }
    // Timing is kept apart from the deterministic artifacts.
    let timing: Vec<(String, f64)> = p.logs.iter().map(|l| (l.key.clone(), l.wall_clock_s)).collect();
    let timing_path = outputs.path("timing.json");
    let body = serde_json::json!({ "total_s": elapsed, "per_adapter_s": timing });
    std::fs::write(&timing_path, body.to_string() + "\n").map_err(|e| Error::io(&timing_path, e))?;
    let dir = outputs.dir.display().to_string();
    outputs.finish()?;
    summary.push_str(&format!("checkpoint {dir}/bank.json\n"));
    Ok(summary)
}

/// Reads prediction inputs. Label fields are optional here; unlabeled rows
/// need only `id`, `lang` and `text`.
fn read_inputs(path: &Path) -> Result<Vec<Instance>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let at = |e: Error| Error::Data(format!("{}:{}: {e}", path.display(), i + 1));
        let mut v: Value = serde_json::from_str(line).map_err(|e| at(Error::Data(e.to_string())))?;
        if let Some(obj) = v.as_object_mut() {
            if !obj.contains_key("label_task1") {
                obj.insert("label_task1".into(), Label::NotSexist.as_str().into());
                obj.insert("label_task2".into(), crate::data::ABSENT.into());
                obj.insert("labels_task3".into(), crate::data::ABSENT.into());
            }
        }
        out.push(Instance::from_json(&v).map_err(at)?);
    }
    Ok(out)
}

/// Predicts every line of `input` top-down with the adapters of
/// `checkpoint`; NOT_SEXIST rows carry `"-"` children.
pub fn cmd_predict(cfg: &RunConfig, checkpoint: &Path, input: &Path, out: Option<&Path>) -> Result<String> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let mut outputs = Outputs::create(cfg.out_dir(out)?, RunManifest::new("predict", Some(cfg)))?;
    let mut model = Model::build(&cfg.model, seed)?;
    let hash = model.base_hash();
    outputs.manifest.base_hash = Some(hash.clone());
    let mut bank = BankCheckpoint::read(checkpoint, &hash)?;
    outputs.input(checkpoint)?;
    outputs.input(input)?;
    let instances = read_inputs(input)?;
    let preds = predict_dataset(&mut model, &mut bank, &instances, false)?;
    let records: Vec<LabelRecord> = preds.iter().zip(&instances).map(|(p, x)| p.record(&x.id)).collect();
    let path = outputs.path("predictions.jsonl");
    write_records(&path, &records)?;
    outputs.record("predictions.jsonl")?;
    outputs.finish()?;
    Ok(format!("wrote {} predictions to {}\n", records.len(), path.display()))
}

/// Scores `pred` against `gold` by id and writes `metrics.json`; prints the
/// table. The report lands next to the predictions unless `out` is set.
pub fn cmd_evaluate(pred: &Path, gold: &Path, metric: Metric, out: Option<&Path>) -> Result<String> {
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => pred.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let preds = read_records(pred)?;
    let golds = parse_dataset(gold)?;
    let report = evaluate_predictions(&preds, &golds, metric, &IcmConfig::default())?;
    let mut outputs = Outputs::create(dir, RunManifest::new("evaluate", None))?;
    outputs.input(pred)?;
    outputs.input(gold)?;
    outputs.write("metrics.json", report.to_json().as_bytes())?;
    let table = report.to_table();
    outputs.write("metrics.txt", table.as_bytes())?;
    outputs.finish()?;
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationMode {
    JointVsSeparate,
    Rank,
    Lambda,
}

impl AblationMode {
    pub const NAMES: [&'static str; 3] = ["joint-vs-separate", "rank", "lambda"];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::JointVsSeparate => Self::NAMES[0],
            AblationMode::Rank => Self::NAMES[1],
            AblationMode::Lambda => Self::NAMES[2],
        }
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint-vs-separate" => Ok(AblationMode::JointVsSeparate),
            "rank" => Ok(AblationMode::Rank),
            "lambda" => Ok(AblationMode::Lambda),
            _ => Err(Error::Config(format!(
                "unknown ablation mode {s:?}; expected one of {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

/// Runs one ablation harness on the synthetic corpus and writes its report
/// as `<mode>.json` and `<mode>.txt`.
pub fn cmd_ablate(mode: AblationMode, cfg: &RunConfig, out: Option<&Path>) -> Result<String> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let gen = cfg.synth()?;
    let setup = cfg.setup();
    let a = &cfg.ablation;
    let mut outputs = Outputs::create(cfg.out_dir(out)?, RunManifest::new("ablate", Some(cfg)))?;
    let name = mode.as_str();
    let table = match mode {
        AblationMode::JointVsSeparate => {
            let r = ablate_joint_vs_separate(gen, &setup, &a.seeds)?;
            outputs.write_json(&format!("{name}.json"), &r)?;
            r.to_table()
        }
        AblationMode::Rank => {
            let r = ablate_rank(&a.ranks, gen, &setup, seed, a.rank_train)?;
            outputs.write_json(&format!("{name}.json"), &r)?;
            r.to_table()
        }
        AblationMode::Lambda => {
            let r = ablate_lambda(&a.lambdas, gen, &setup, &a.seeds)?;
            outputs.write_json(&format!("{name}.json"), &r)?;
            r.to_table()
        }
    };
    outputs.write(&format!("{name}.txt"), table.as_bytes())?;
    outputs.finish()?;
    Ok(table)
}
