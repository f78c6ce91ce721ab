//! Seeded bilingual corpus with planted lexical cues.
//!
//! Every label owns `cues_per_label` cue words per language, each a single
//! distinctive character (uppercase letter, digit or Latin-1 letter). A
//! `shared_cue_fraction` of them is common to both languages, the rest are
//! language-specific. Filler words use disjoint lowercase alphabets per
//! language (`a-m` for English, `n-z` for Spanish). For every gold label,
//! `cue_draws` independent attempts each insert one of its cues with
//! probability `cue_strength`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{to_jsonl, Instance, Lang};
use crate::error::{Error, Result};
use crate::hierarchy::{Label, Level};

const FILLER_VOCAB: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelDist {
    pub p_sexist: f64,
    /// Relative weights of the level-2 labels.
    pub level2: [f64; 3],
    /// Relative weights of the level-3 categories.
    pub level3: [f64; 5],
    /// Probability of a second distinct category.
    pub p_extra_category: f64,
}

impl Default for LabelDist {
    fn default() -> Self {
        LabelDist {
            p_sexist: 0.5,
            level2: [1.0; 3],
            level3: [1.0; 5],
            p_extra_category: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Training instances per language.
    pub n_per_lang: usize,
    pub dev_per_lang: usize,
    pub test_per_lang: usize,
    pub cue_strength: f64,
    pub shared_cue_fraction: f64,
    pub cues_per_label: usize,
    pub cue_draws: usize,
    pub min_filler: usize,
    pub max_filler: usize,
    pub label_dist: LabelDist,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_lang: 200,
            dev_per_lang: 100,
            test_per_lang: 100,
            cue_strength: 0.9,
            shared_cue_fraction: 0.5,
            cues_per_label: 5,
            cue_draws: 2,
            min_filler: 4,
            max_filler: 8,
            label_dist: LabelDist::default(),
            seed: 0,
        }
    }
}

fn cue_pool() -> Vec<char> {
    ('A'..='Z').chain('0'..='9').chain('\u{c0}'..='\u{ff}').collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("cue_strength", self.cue_strength),
            ("shared_cue_fraction", self.shared_cue_fraction),
            ("label_dist.p_sexist", self.label_dist.p_sexist),
            ("label_dist.p_extra_category", self.label_dist.p_extra_category),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.n_per_lang == 0 {
            return Err(Error::Config("n_per_lang must be at least 1".into()));
        }
        if self.cues_per_label == 0 {
            return Err(Error::Config("cues_per_label must be at least 1".into()));
        }
        if self.min_filler > self.max_filler {
            return Err(Error::Config("min_filler exceeds max_filler".into()));
        }
        let weights = self.label_dist.level2.iter().chain(&self.label_dist.level3);
        if weights.clone().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("label weights must be finite and nonnegative".into()));
        }
        if self.label_dist.level2.iter().sum::<f64>() <= 0.0 || self.label_dist.level3.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("label weights must not all be zero".into()));
        }
        let needed = self.cue_symbols_needed();
        if needed > cue_pool().len() {
            return Err(Error::Config(format!(
                "{needed} cue symbols needed but only {} exist; lower cues_per_label",
                cue_pool().len()
            )));
        }
        Ok(())
    }

    fn n_shared(&self) -> usize {
        (self.shared_cue_fraction * self.cues_per_label as f64).round() as usize
    }

    fn cue_symbols_needed(&self) -> usize {
        let shared = self.n_shared();
        Label::ALL.len() * (shared + 2 * (self.cues_per_label - shared))
    }
}

/// Cue words per (language, label).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueTable {
    cues: BTreeMap<Lang, BTreeMap<Label, Vec<String>>>,
}

impl CueTable {
    fn build(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> CueTable {
        let mut pool: Vec<String> = cue_pool().into_iter().map(String::from).collect();
        pool.shuffle(rng);
        let mut next = pool.into_iter();
        let shared = cfg.n_shared();
        let mut cues: BTreeMap<Lang, BTreeMap<Label, Vec<String>>> = BTreeMap::new();
        for label in Label::ALL {
            let common: Vec<String> = next.by_ref().take(shared).collect();
            for lang in Lang::ALL {
                let mut own = common.clone();
                own.extend(next.by_ref().take(cfg.cues_per_label - shared));
                cues.entry(lang).or_default().insert(label, own);
            }
        }
        CueTable { cues }
    }

    pub fn cues(&self, lang: Lang, label: Label) -> &[String] {
        &self.cues[&lang][&label]
    }

    /// Label planted by `word`, if it is a cue.
    pub fn lookup(&self, word: &str) -> Option<Label> {
        self.cues
            .values()
            .flat_map(|m| m.iter())
            .find(|(_, ws)| ws.iter().any(|w| w == word))
            .map(|(&l, _)| l)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
    pub cues: CueTable,
}

fn weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).expect("validated weights")
}

fn filler_vocab(lang: Lang, rng: &mut ChaCha8Rng) -> Vec<String> {
    let letters: Vec<char> = match lang {
        Lang::En => ('a'..='m').collect(),
        Lang::Es => ('n'..='z').collect(),
    };
    (0..FILLER_VOCAB)
        .map(|_| {
            let len = rng.random_range(2..=5);
            (0..len).map(|_| *letters.choose(rng).expect("nonempty")).collect()
        })
        .collect()
}

fn sample_labels(dist: &LabelDist, rng: &mut ChaCha8Rng) -> (Label, Option<Label>, Option<Vec<Label>>) {
    if rng.random::<f64>() >= dist.p_sexist {
        return (Label::NotSexist, None, None);
    }
    let l2 = Level::TWO.labels()[weighted(&dist.level2, rng)];
    let first = weighted(&dist.level3, rng);
    let mut cats = vec![first];
    if rng.random::<f64>() < dist.p_extra_category {
        let mut rest = dist.level3;
        rest[first] = 0.0;
        if rest.iter().any(|&w| w > 0.0) {
            cats.push(weighted(&rest, rng));
        }
    }
    cats.sort_unstable();
    let l3 = cats.into_iter().map(|i| Level::THREE.labels()[i]).collect();
    (Label::Sexist, Some(l2), Some(l3))
}

fn gen_split(cfg: &SynthConfig, cues: &CueTable, split: &str, lang: Lang, n: usize, stream: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let fillers = filler_vocab(lang, &mut rng);
    (0..n)
        .map(|i| {
            let (l1, l2, l3) = sample_labels(&cfg.label_dist, &mut rng);
            let n_fill = rng.random_range(cfg.min_filler..=cfg.max_filler);
            let mut words: Vec<String> = (0..n_fill)
                .map(|_| fillers.choose(&mut rng).expect("nonempty").clone())
                .collect();
            let golds = std::iter::once(l1).chain(l2).chain(l3.iter().flatten().copied());
            for label in golds.collect::<Vec<_>>() {
                for _ in 0..cfg.cue_draws {
                    if rng.random::<f64>() < cfg.cue_strength {
                        let cue = cues.cues(lang, label).choose(&mut rng).expect("nonempty").clone();
                        let at = rng.random_range(0..=words.len());
                        words.insert(at, cue);
                    }
                }
            }
            Instance {
                id: format!("{split}-{lang}-{i:05}"),
                lang,
                text: words.join(" "),
                gold_l1: l1,
                gold_l2: l2,
                gold_l3: l3,
            }
        })
        .collect()
}

/// Deterministic train/dev/test corpus. Each split and language draws from
/// its own stream, so split sizes do not perturb one another.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cues = CueTable::build(cfg, &mut rng);
    let sizes = [
        ("train", cfg.n_per_lang),
        ("dev", cfg.dev_per_lang),
        ("test", cfg.test_per_lang),
    ];
    let mut splits = Vec::new();
    for (si, (name, n)) in sizes.into_iter().enumerate() {
        let mut out = Vec::new();
        for (li, lang) in Lang::ALL.into_iter().enumerate() {
            let stream = 1 + (si * Lang::ALL.len() + li) as u64;
            out.extend(gen_split(cfg, &cues, name, lang, n, stream));
        }
        splits.push(out);
    }
    let test = splits.pop().expect("three splits");
    let dev = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(SynthCorpus { train, dev, test, cues })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub split: String,
    pub file: String,
    pub instances: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config: SynthConfig,
    pub seed: u64,
    pub splits: Vec<SplitEntry>,
    pub cues: CueTable,
}

/// Writes `train.jsonl`, `dev.jsonl`, `test.jsonl` and `manifest.json`
/// under `dir`.
pub fn write_corpus(dir: &Path, cfg: &SynthConfig) -> Result<CorpusManifest> {
    let corpus = gen_synthetic(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut splits = Vec::new();
    for (name, data) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let file = format!("{name}.jsonl");
        let body = to_jsonl(data);
        let path = dir.join(&file);
        std::fs::write(&path, &body).map_err(|e| Error::io(&path, e))?;
        splits.push(SplitEntry {
            split: name.to_string(),
            file,
            instances: data.len(),
            sha256: hex::encode(Sha256::digest(body.as_bytes())),
        });
    }
    let manifest = CorpusManifest {
        config: cfg.clone(),
        seed: cfg.seed,
        splits,
        cues: corpus.cues,
    };
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest is plain data");
    std::fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
