use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::bank::{AdapterBank, Route, RouteMode};
use super::{Label, Level};
use crate::data::{format_prompt, Instance, ABSENT};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::sigmoid;

/// Per-level probabilities and hard labels of one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierPrediction {
    pub p1: Vec<f64>,
    /// `None` when level 2 was never evaluated.
    pub p2: Option<Vec<f64>>,
    pub p3: Option<Vec<f64>>,
    pub y1: Label,
    pub y2: Option<Label>,
    pub y3: Option<Vec<Label>>,
}

impl HierPrediction {
    /// Hard labels as a record; short-circuited levels are absent.
    pub fn record(&self, id: &str) -> LabelRecord {
        LabelRecord {
            id: id.to_string(),
            l1: self.y1,
            l2: self.y2,
            l3: self.y3.clone(),
        }
    }

    /// Raw child confidence above 0.5 under a NOT_SEXIST root.
    pub fn is_invalid_transition(&self) -> bool {
        self.y1 == Label::NotSexist
            && [&self.p2, &self.p3]
                .into_iter()
                .flatten()
                .any(|p| p.iter().any(|&x| x > 0.5))
    }
}

/// Softmax for levels 1-2, sigmoids for level 3.
pub fn probs_from_scores(level: Level, scores: &[f64]) -> Vec<f64> {
    if level.is_multilabel() {
        scores.iter().map(|&s| sigmoid(s)).collect()
    } else {
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

/// Argmax for levels 1-2. Level 3 keeps every category above 0.5 and falls
/// back to the single most probable one when none is.
pub fn decide(level: Level, probs: &[f64]) -> Vec<Label> {
    let labels = level.labels();
    if !level.is_multilabel() {
        return vec![labels[argmax(probs)]];
    }
    let picked: Vec<Label> = probs
        .iter()
        .zip(labels)
        .filter(|(&p, _)| p > 0.5)
        .map(|(_, &l)| l)
        .collect();
    if picked.is_empty() {
        vec![labels[argmax(probs)]]
    } else {
        picked
    }
}

/// Scores `level` for the listed instances with adapter `key` attached.
pub(crate) fn score_level(
    model: &mut Model,
    bank: &mut AdapterBank,
    key: &str,
    level: Level,
    items: &[&Instance],
) -> Result<Vec<Vec<f64>>> {
    let max_seq = model.config().max_seq;
    bank.with_adapter(model, key, |m| {
        let m: &Model = m;
        items
            .par_iter()
            .map(|inst| {
                let prompt = format_prompt(inst, level, None, max_seq)?;
                let scores = m.class_logits(prompt.input(), level.get())?;
                Ok(probs_from_scores(level, &scores))
            })
            .collect()
    })
}

/// Per-instance routing keys for `level`, grouped so each adapter is
/// attached once.
fn grouped(routes: Vec<(usize, String)>) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, k) in routes {
        out.entry(k).or_default().push(i);
    }
    out
}

/// Top-down prediction over a dataset. With `raw` set, child levels are also
/// scored for NOT_SEXIST roots (routed as if the root were SEXIST) so their
/// probabilities are available; hard child labels stay short-circuited.
pub fn predict_dataset(
    model: &mut Model,
    bank: &mut AdapterBank,
    instances: &[Instance],
    raw: bool,
) -> Result<Vec<HierPrediction>> {
    let all: Vec<&Instance> = instances.iter().collect();
    let key1 = match bank.route(Level::ONE, None, RouteMode::Infer, None)? {
        Route::Adapter(k) => k,
        Route::ShortCircuit => unreachable!("level 1 never short-circuits"),
    };
    let p1 = score_level(model, bank, &key1, Level::ONE, &all)?;
    let mut preds: Vec<HierPrediction> = p1
        .into_iter()
        .map(|p| HierPrediction {
            y1: decide(Level::ONE, &p)[0],
            p1: p,
            p2: None,
            p3: None,
            y2: None,
            y3: None,
        })
        .collect();

    // Raw child predictions: level-2 argmax for every scored instance, used
    // to route level 3.
    let mut raw_y2: Vec<Option<Label>> = vec![None; instances.len()];
    for level in [Level::TWO, Level::THREE] {
        let mut routes = Vec::new();
        for (i, p) in preds.iter().enumerate() {
            let parent = if level == Level::TWO {
                if raw {
                    Label::Sexist
                } else {
                    p.y1
                }
            } else {
                match raw_y2[i] {
                    Some(l) => l,
                    None => continue,
                }
            };
            if let Route::Adapter(k) = bank.route(level, Some(parent), RouteMode::Infer, None)? {
                routes.push((i, k));
            }
        }
        for (key, idx) in grouped(routes) {
            let items: Vec<&Instance> = idx.iter().map(|&i| &instances[i]).collect();
            let probs = score_level(model, bank, &key, level, &items)?;
            for (&i, p) in idx.iter().zip(probs) {
                let labels = decide(level, &p);
                let pred = &mut preds[i];
                let live = pred.y1 == Label::Sexist;
                if level == Level::TWO {
                    raw_y2[i] = Some(labels[0]);
                    pred.y2 = live.then_some(labels[0]);
                    pred.p2 = Some(p);
                } else {
                    pred.y3 = live.then_some(labels);
                    pred.p3 = Some(p);
                }
            }
        }
    }
    Ok(preds)
}

/// Top-down prediction for one instance; levels 2-3 are only evaluated under
/// a SEXIST root.
pub fn predict_hierarchical(model: &mut Model, bank: &mut AdapterBank, inst: &Instance) -> Result<HierPrediction> {
    let mut v = predict_dataset(model, bank, std::slice::from_ref(inst), false)?;
    Ok(v.pop().expect("one instance in, one out"))
}

/// Fraction of NOT_SEXIST-root predictions whose raw child confidence
/// exceeds 0.5; `None` when no root is NOT_SEXIST.
pub fn invalid_transition_rate(preds: &[HierPrediction]) -> Option<f64> {
    let roots = preds.iter().filter(|p| p.y1 == Label::NotSexist).count();
    (roots > 0).then(|| preds.iter().filter(|p| p.is_invalid_transition()).count() as f64 / roots as f64)
}

/// Hard labels of one instance, as written to prediction files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRecord {
    pub id: String,
    pub l1: Label,
    pub l2: Option<Label>,
    pub l3: Option<Vec<Label>>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    label_task1: &'a str,
    label_task2: &'a str,
    labels_task3: Value,
}

impl LabelRecord {
    pub fn validate(&self) -> Result<()> {
        Instance {
            id: self.id.clone(),
            lang: crate::data::Lang::En,
            text: String::new(),
            gold_l1: self.l1,
            gold_l2: self.l2,
            gold_l3: self.l3.clone(),
        }
        .validate()
    }

    pub fn labels(&self, level: Level) -> Vec<Label> {
        match level.get() {
            1 => vec![self.l1],
            2 => self.l2.into_iter().collect(),
            _ => self.l3.clone().unwrap_or_default(),
        }
    }

    /// Every label across levels, root first.
    pub fn label_set(&self) -> Vec<Label> {
        Level::ALL.iter().flat_map(|&l| self.labels(l)).collect()
    }

    pub fn to_line(&self) -> String {
        let out = RecordOut {
            id: &self.id,
            label_task1: self.l1.as_str(),
            label_task2: self.l2.map_or(ABSENT, Label::as_str),
            labels_task3: match &self.l3 {
                None => ABSENT.into(),
                Some(ls) => ls.iter().map(|l| Value::from(l.as_str())).collect(),
            },
        };
        serde_json::to_string(&out).expect("record is plain data")
    }

    /// Reads prediction or gold lines; `lang` and `text` are ignored.
    pub fn from_json(v: &Value) -> Result<LabelRecord> {
        let mut obj = v
            .as_object()
            .cloned()
            .ok_or_else(|| Error::Data("record is not a JSON object".into()))?;
        obj.entry("lang").or_insert_with(|| "en".into());
        obj.entry("text").or_insert_with(|| "".into());
        let inst = Instance::from_json(&Value::Object(obj))?;
        Ok(LabelRecord::from(&inst))
    }
}

impl From<&Instance> for LabelRecord {
    fn from(inst: &Instance) -> Self {
        LabelRecord {
            id: inst.id.clone(),
            l1: inst.gold_l1,
            l2: inst.gold_l2,
            l3: inst.gold_l3.clone(),
        }
    }
}

pub fn parse_records(text: &str) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str::<Value>(line)
            .map_err(|e| Error::Data(e.to_string()))
            .and_then(|v| LabelRecord::from_json(&v))
            .map_err(|e| match e {
                Error::Data(m) => Error::Data(format!("line {}: {m}", i + 1)),
                e => e,
            })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<LabelRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn write_records(path: &Path, records: &[LabelRecord]) -> Result<()> {
    let mut body = String::new();
    for r in records {
        body.push_str(&r.to_line());
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
