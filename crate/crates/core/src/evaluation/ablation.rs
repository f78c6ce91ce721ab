use serde::{Deserialize, Serialize};

use super::f1::f1_scores;
use super::report::render;
use crate::data::{gen_synthetic, Instance, Lang, SynthConfig};
use crate::error::{Error, Result};
use crate::hierarchy::{
    invalid_transition_rate, predict_dataset, AdapterBank, BankCheckpoint, Granularity, HierPrediction, Level,
};
use crate::lora::{count_trainable, LoraConfig};
use crate::model::{Model, ModelCheckpoint, ModelConfig, MODULES_TO_SAVE};
use crate::training::{train_all, TrainConfig, TrainLog};

/// Everything needed to build, adapt and train one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSetup {
    pub model: ModelConfig,
    pub lora: LoraConfig,
    pub train: TrainConfig,
    pub granularity: Granularity,
    /// Train modules-to-save alongside the LoRA factors.
    pub save_modules: bool,
    /// When set, `train.max_steps` becomes this many passes over the
    /// training set, so larger training sets get proportionally more steps.
    pub epochs: Option<usize>,
}

impl Default for PipelineSetup {
    fn default() -> Self {
        PipelineSetup {
            model: ModelConfig::default(),
            lora: LoraConfig::default(),
            train: TrainConfig::default(),
            granularity: Granularity::PerLevel,
            save_modules: true,
            epochs: None,
        }
    }
}

pub struct TrainedPipeline {
    pub model: Model,
    pub bank: AdapterBank,
    pub logs: Vec<TrainLog>,
}

impl TrainedPipeline {
    pub fn predict(&mut self, instances: &[Instance], raw: bool) -> Result<Vec<HierPrediction>> {
        predict_dataset(&mut self.model, &mut self.bank, instances, raw)
    }
}

/// Builds a model and bank from `seed` and trains all three levels.
pub fn run_pipeline(setup: &PipelineSetup, seed: u64, train: &[Instance], dev: &[Instance]) -> Result<TrainedPipeline> {
    let mut model = Model::build(&setup.model, seed)?;
    let lora = LoraConfig {
        seed,
        ..setup.lora.clone()
    };
    let mut bank = AdapterBank::init(&model, &lora, setup.granularity, setup.save_modules)?;
    let mut cfg = TrainConfig {
        seed,
        ..setup.train.clone()
    };
    if let Some(e) = setup.epochs {
        cfg.max_steps = cfg.steps_for_epochs(train.len(), e);
    }
    let logs = train_all(&mut model, &mut bank, train, dev, &cfg)?;
    Ok(TrainedPipeline { model, bank, logs })
}

/// Macro-F1 of hierarchical predictions at each level.
pub fn level_macro_f1(preds: &[HierPrediction], golds: &[Instance]) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (i, level) in Level::ALL.into_iter().enumerate() {
        let p: Vec<_> = preds
            .iter()
            .zip(golds)
            .map(|(p, g)| p.record(&g.id).labels(level))
            .collect();
        let g: Vec<_> = golds.iter().map(|g| g.gold(level)).collect();
        out[i] = f1_scores(&p, &g, level)?.macro_f1;
    }
    Ok(out)
}

fn by_lang(xs: &[Instance], lang: Lang) -> Vec<Instance> {
    xs.iter().filter(|x| x.lang == lang).cloned().collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn spread(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    Ok(())
}

fn corpus_for(gen: &SynthConfig, seed: u64) -> Result<crate::data::SynthCorpus> {
    gen_synthetic(&SynthConfig {
        seed: gen.seed.wrapping_add(seed),
        ..gen.clone()
    })
}

/// Test-split macro-F1 per language and level for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSeedRow {
    pub seed: u64,
    /// `[en, es]` × levels, each language scored by its own model.
    pub separate: [[f64; 3]; 2],
    /// `[en, es]` × levels, both scored by the bilingual model.
    pub joint: [[f64; 3]; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointRow {
    /// `None` for the mean over the three subtasks.
    pub level: Option<Level>,
    /// `en`, `es` or `avg`.
    pub lang: String,
    pub separate_mean: f64,
    pub joint_mean: f64,
    pub delta_mean: f64,
    pub delta_spread: f64,
    /// Mean delta exceeds two standard errors across seeds.
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointReport {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<JointSeedRow>,
    pub rows: Vec<JointRow>,
}

impl JointReport {
    pub fn row(&self, level: Option<Level>, lang: &str) -> &JointRow {
        self.rows
            .iter()
            .find(|r| r.level == level && r.lang == lang)
            .expect("every level and language has a row")
    }

    /// Separate and joint rows per subtask over en, es and their average;
    /// joint cells carry the delta.
    pub fn to_table(&self) -> String {
        let mut rows = vec![vec!["subtask", "setting", "en", "es", "avg"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>()];
        let levels = Level::ALL.map(Some).into_iter().chain(std::iter::once(None));
        for level in levels {
            let name = level.map_or_else(|| "mean".to_string(), |l| l.to_string());
            let cells: Vec<&JointRow> = ["en", "es", "avg"].iter().map(|l| self.row(level, l)).collect();
            let mut sep = vec![name.clone(), "separate".to_string()];
            sep.extend(cells.iter().map(|r| format!("{:.3}", r.separate_mean)));
            let mut joint = vec![String::new(), "joint".to_string()];
            joint.extend(cells.iter().map(|r| {
                let flag = if r.significant { "" } else { " ns" };
                format!("{:.3} ({:+.3}{flag})", r.joint_mean, r.delta_mean)
            }));
            rows.push(sep);
            rows.push(joint);
        }
        render(&rows)
    }
}

/// Per seed: one model per language against one bilingual model, each
/// scored on the held-out test split of every language.
pub fn ablate_joint_vs_separate(gen: &SynthConfig, setup: &PipelineSetup, seeds: &[u64]) -> Result<JointReport> {
    check_seeds(seeds)?;
    let mut per_seed = Vec::new();
    for &seed in seeds {
        let corpus = corpus_for(gen, seed)?;
        let mut separate = [[0.0; 3]; 2];
        let mut joint = [[0.0; 3]; 2];
        let mut both = run_pipeline(setup, seed, &corpus.train, &corpus.dev)?;
        for (li, lang) in Lang::ALL.into_iter().enumerate() {
            let test = by_lang(&corpus.test, lang);
            let mut mono = run_pipeline(setup, seed, &by_lang(&corpus.train, lang), &by_lang(&corpus.dev, lang))?;
            separate[li] = level_macro_f1(&mono.predict(&test, false)?, &test)?;
            joint[li] = level_macro_f1(&both.predict(&test, false)?, &test)?;
        }
        per_seed.push(JointSeedRow { seed, separate, joint });
    }
    let mut rows = Vec::new();
    let levels = Level::ALL.map(Some).into_iter().chain(std::iter::once(None));
    for level in levels {
        let pick = |m: &[[f64; 3]; 2], lang: usize| -> f64 {
            let at = |li: usize| match level {
                Some(l) => m[li][l.get() as usize - 1],
                None => mean(&m[li]),
            };
            if lang < 2 {
                at(lang)
            } else {
                (at(0) + at(1)) / 2.0
            }
        };
        for (lang_i, lang) in ["en", "es", "avg"].into_iter().enumerate() {
            let sep: Vec<f64> = per_seed.iter().map(|r| pick(&r.separate, lang_i)).collect();
            let jnt: Vec<f64> = per_seed.iter().map(|r| pick(&r.joint, lang_i)).collect();
            let deltas: Vec<f64> = jnt.iter().zip(&sep).map(|(j, s)| j - s).collect();
            let dm = mean(&deltas);
            let ds = spread(&deltas);
            let se = ds / (deltas.len() as f64).sqrt();
            rows.push(JointRow {
                level,
                lang: lang.to_string(),
                separate_mean: mean(&sep),
                joint_mean: mean(&jnt),
                delta_mean: dm,
                delta_spread: ds,
                significant: deltas.len() > 1 && dm.abs() > 2.0 * se,
            });
        }
    }
    Ok(JointReport {
        seeds: seeds.to_vec(),
        per_seed,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub alpha: f64,
    /// LoRA parameters of one adapter set.
    pub lora_params: usize,
    /// LoRA plus modules-to-save parameters of one adapter set.
    pub trainable_params: usize,
    pub trainable_fraction: f64,
    /// Test macro-F1 per level.
    pub f1: [f64; 3],
    pub mean_f1: f64,
    /// Relative change of `mean_f1` against the previous row, in percent.
    pub delta_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rows: Vec<RankRow>,
}

impl RankReport {
    pub fn to_table(&self) -> String {
        let mut rows = vec![["rank", "alpha", "lora params", "trainable", "vs base", "F1"]
            .map(String::from)
            .to_vec()];
        for r in &self.rows {
            let delta = r.delta_pct.map_or_else(String::new, |d| format!(" ({d:+.1}%)"));
            rows.push(vec![
                r.rank.to_string(),
                format!("{}", r.alpha),
                r.lora_params.to_string(),
                r.trainable_params.to_string(),
                format!("{:.4}", r.trainable_fraction),
                format!("{:.3}{delta}", r.mean_f1),
            ]);
        }
        render(&rows)
    }
}

/// One full pipeline per rank with `alpha = rank`. When `train` is false
/// only the parameter columns are filled.
pub fn ablate_rank(
    ranks: &[usize],
    gen: &SynthConfig,
    setup: &PipelineSetup,
    seed: u64,
    train: bool,
) -> Result<RankReport> {
    if ranks.is_empty() || ranks.contains(&0) {
        return Err(Error::Config(
            "ranks must be a nonempty list of positive integers".into(),
        ));
    }
    let corpus = if train { Some(corpus_for(gen, seed)?) } else { None };
    let arch = setup.model.arch_listing();
    let saved: &[&str] = if setup.save_modules { &MODULES_TO_SAVE } else { &[] };
    let mut rows: Vec<RankRow> = Vec::new();
    for &rank in ranks {
        let lora = LoraConfig {
            rank,
            alpha: rank as f64,
            ..setup.lora.clone()
        };
        let count = count_trainable(&arch, &lora, saved)?;
        let f1 = match &corpus {
            Some(c) => {
                let s = PipelineSetup {
                    lora: lora.clone(),
                    ..setup.clone()
                };
                let mut p = run_pipeline(&s, seed, &c.train, &c.dev)?;
                level_macro_f1(&p.predict(&c.test, false)?, &c.test)?
            }
            None => [f64::NAN; 3],
        };
        let mean_f1 = mean(&f1);
        let delta_pct = match rows.last() {
            Some(prev) if train => Some(100.0 * (mean_f1 - prev.mean_f1) / prev.mean_f1),
            _ => None,
        };
        rows.push(RankRow {
            rank,
            alpha: lora.alpha,
            lora_params: count.lora_params,
            trainable_params: count.lora_params + count.saved_params,
            trainable_fraction: count.trainable_fraction,
            f1,
            mean_f1,
            delta_pct,
        });
    }
    Ok(RankReport { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    /// Invalid-transition rate on the test split, per seed.
    pub rates: Vec<f64>,
    pub mean_rate: f64,
    /// Seed-averaged test macro-F1 per level.
    pub f1: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<LambdaRow>,
}

impl LambdaReport {
    pub fn to_table(&self) -> String {
        let mut rows = vec![["lambda", "invalid rate", "spread", "F1 L1", "F1 L2", "F1 L3"]
            .map(String::from)
            .to_vec()];
        for r in &self.rows {
            let mut row = vec![format!("{}", r.lambda)];
            row.push(format!("{:.4}", r.mean_rate));
            row.push(format!("{:.4}", spread(&r.rates)));
            row.extend(r.f1.iter().map(|f| format!("{f:.3}")));
            rows.push(row);
        }
        render(&rows)
    }
}

/// Full pipelines per (seed, lambda); the rate counts NOT_SEXIST roots
/// whose raw child confidence exceeds 0.5. A test split without NOT_SEXIST
/// roots scores 0.
pub fn ablate_lambda(lambdas: &[f64], gen: &SynthConfig, setup: &PipelineSetup, seeds: &[u64]) -> Result<LambdaReport> {
    check_seeds(seeds)?;
    if lambdas.is_empty() {
        return Err(Error::Config("lambda ablation needs at least one value".into()));
    }
    let mut rates = vec![Vec::new(); lambdas.len()];
    let mut f1s = vec![Vec::new(); lambdas.len()];
    for &seed in seeds {
        let corpus = corpus_for(gen, seed)?;
        for (i, &lambda) in lambdas.iter().enumerate() {
            let s = PipelineSetup {
                train: TrainConfig {
                    lambda,
                    ..setup.train.clone()
                },
                ..setup.clone()
            };
            let mut p = run_pipeline(&s, seed, &corpus.train, &corpus.dev)?;
            let preds = p.predict(&corpus.test, true)?;
            rates[i].push(invalid_transition_rate(&preds).unwrap_or(0.0));
            f1s[i].push(level_macro_f1(&preds, &corpus.test)?);
        }
    }
    let rows = lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let mut f1 = [0.0; 3];
            for (l, slot) in f1.iter_mut().enumerate() {
                *slot = mean(&f1s[i].iter().map(|f| f[l]).collect::<Vec<_>>());
            }
            LambdaRow {
                lambda,
                mean_rate: mean(&rates[i]),
                rates: rates[i].clone(),
                f1,
            }
        })
        .collect();
    Ok(LambdaReport {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Parameters of the base model.
    pub total_params: usize,
    pub n_adapters: usize,
    /// Trainable parameters of one adapter set (LoRA plus saved modules).
    pub adapter_params: usize,
    pub adapter_lora_params: usize,
    pub trainable_fraction: f64,
    pub bank_params: usize,
    /// Serialized size of one adapter set.
    pub adapter_bytes: usize,
    pub bank_bytes: usize,
    /// Serialized size of the model with every weight stored in full, as a
    /// full fine-tune would keep it.
    pub full_model_bytes: usize,
    /// Serialized size of the frozen base as shipped.
    pub base_bytes: usize,
}

impl EfficiencyReport {
    pub fn to_table(&self) -> String {
        let pct = |n: usize| format!("{:.2}%", 100.0 * n as f64 / self.total_params as f64);
        let rows = vec![
            vec![
                "".to_string(),
                "".to_string(),
                "parameters".to_string(),
                "share".to_string(),
            ],
            vec![
                "base model".into(),
                "".into(),
                self.total_params.to_string(),
                "100%".into(),
            ],
            vec![
                "one adapter".into(),
                "".into(),
                self.adapter_params.to_string(),
                pct(self.adapter_params),
            ],
            vec![
                "  of which LoRA".into(),
                "".into(),
                self.adapter_lora_params.to_string(),
                pct(self.adapter_lora_params),
            ],
            vec![
                format!("bank ({})", self.n_adapters),
                "".into(),
                self.bank_params.to_string(),
                pct(self.bank_params),
            ],
            vec!["".into(), "".into(), "bytes".into(), "".into()],
            vec![
                "full model".into(),
                "".into(),
                self.full_model_bytes.to_string(),
                "".into(),
            ],
            vec![
                "quantized base".into(),
                "".into(),
                self.base_bytes.to_string(),
                "".into(),
            ],
            vec![
                "one adapter".into(),
                "".into(),
                self.adapter_bytes.to_string(),
                "".into(),
            ],
            vec!["bank".into(), "".into(), self.bank_bytes.to_string(), "".into()],
        ];
        render(&rows)
    }
}

/// Parameter and checkpoint-size accounting of `bank` over `model`; the
/// first bank entry stands for one adapter set.
pub fn efficiency_report(model: &Model, bank: &AdapterBank) -> Result<EfficiencyReport> {
    if model.active_name().is_some() {
        return Err(Error::State("detach the active adapter before accounting".into()));
    }
    let hash = model.base_hash();
    let total_params = model.config().n_params();
    let first = bank.entries().next().map(|e| e.1);
    let adapter_params = first.map_or(0, |s| s.n_params());
    let adapter_lora_params = first.map_or(0, |s| s.factors.values().map(|f| f.n_params()).sum());
    Ok(EfficiencyReport {
        total_params,
        n_adapters: bank.len(),
        adapter_params,
        adapter_lora_params,
        trainable_fraction: adapter_params as f64 / total_params as f64,
        bank_params: bank.n_params(),
        adapter_bytes: first.map_or(0, |s| s.checkpoint(&hash).to_bytes().len()),
        bank_bytes: BankCheckpoint::new(bank, &hash).to_bytes().len(),
        full_model_bytes: ModelCheckpoint::from_model(&model.merged()?).to_bytes().len(),
        base_bytes: ModelCheckpoint::from_model(model).to_bytes().len(),
    })
}
