//! AdamW with linear warmup, accumulation windows, gold-routed per-level
//! adapter training and validation-plateau early stopping.

mod adamw;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adamw::{adamw_step, AdamState, AdamWConfig};

use crate::data::{format_prompt, Instance};
use crate::error::{Error, Result};
use crate::evaluation::f1_scores;
use crate::hierarchy::predict::score_level;
use crate::hierarchy::{
    decide, level_probs, penalty_term, probs_from_scores, task_loss, AdapterBank, Granularity, HierLossConfig, Label,
    Level, Route, RouteMode,
};
use crate::model::{Mode, Model};
use crate::numerics::{Graph, Tensor};

/// Validation losses must drop by more than this to count as improvement.
pub const PLATEAU_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    /// Optimizer steps per adapter; also the warmup denominator.
    pub max_steps: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub eval_interval: usize,
    pub lambda: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub adamw: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            warmup_fraction: 0.1,
            batch_size: 8,
            grad_accum_steps: 2,
            max_steps: 300,
            patience: 3,
            eval_interval: 25,
            lambda: 0.1,
            seed: 0,
            adamw: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("grad_accum_steps", self.grad_accum_steps),
            ("max_steps", self.max_steps),
            ("patience", self.patience),
            ("eval_interval", self.eval_interval),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        HierLossConfig { lambda: self.lambda }.validate()?;
        self.adamw.validate()
    }

    /// Instances per optimizer step.
    pub fn window(&self) -> usize {
        self.batch_size * self.grad_accum_steps
    }

    /// Optimizer steps covering `epochs` passes over `n` instances.
    pub fn steps_for_epochs(&self, n: usize, epochs: usize) -> usize {
        (n * epochs).div_ceil(self.window()).max(1)
    }
}

/// Warmup length `ceil(warmup_fraction · total_steps)`.
pub fn warmup_steps(total_steps: usize, warmup_fraction: f64) -> usize {
    let x = warmup_fraction * total_steps as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// `lr · min(1, (step + 1) / W)`; constant `lr` without warmup.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let w = warmup_steps(total_steps, cfg.warmup_fraction);
    if w == 0 {
        return cfg.learning_rate;
    }
    cfg.learning_rate * ((step + 1) as f64 / w as f64).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    EarlyStop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrainEvent {
    /// Window means of the loss components after optimizer step `step`.
    Step {
        step: usize,
        lr: f64,
        task: f64,
        hierarchy: f64,
        total: f64,
    },
    Eval {
        step: usize,
        val_loss: f64,
        macro_f1: f64,
        improved: bool,
    },
    Stop {
        step: usize,
        reason: StopReason,
        best_step: Option<usize>,
    },
}

/// Events of one adapter's training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainLog {
    pub key: String,
    pub level: Level,
    pub events: Vec<TrainEvent>,
    /// Kept apart from `events` so logs of identical runs compare equal.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

impl PartialEq for TrainLog {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key && self.level == other.level && self.events == other.events
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    key: &'a str,
    level: Level,
    #[serde(flatten)]
    event: &'a TrainEvent,
}

impl TrainLog {
    pub fn steps(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TrainEvent::Step { .. }))
            .count()
    }

    pub fn evals(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.events.iter().filter_map(|e| match e {
            TrainEvent::Eval {
                step,
                val_loss,
                macro_f1,
                ..
            } => Some((*step, *val_loss, *macro_f1)),
            _ => None,
        })
    }

    pub fn stop(&self) -> Option<(StopReason, Option<usize>)> {
        self.events.iter().rev().find_map(|e| match e {
            TrainEvent::Stop { reason, best_step, .. } => Some((*reason, *best_step)),
            _ => None,
        })
    }

    /// Dev macro-F1 of the restored parameters.
    pub fn best_macro_f1(&self) -> Option<f64> {
        let (_, best) = self.stop()?;
        let best = best?;
        self.evals().find(|e| e.0 == best).map(|e| e.2)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let line = LogLine {
                key: &self.key,
                level: self.level,
                event: e,
            };
            out.push_str(&serde_json::to_string(&line).expect("log is plain data"));
            out.push('\n');
        }
        out
    }
}

/// One training instance as seen by one adapter.
#[derive(Clone, Debug)]
pub(crate) struct Item {
    pub tokens: Vec<usize>,
    /// Task target when gold routing selects this adapter.
    pub gold: Option<Vec<Label>>,
    /// Predicted root is NOT_SEXIST and inference would route here.
    pub penalize: bool,
}

struct InstanceOut {
    task: f64,
    penalty: f64,
    grads: Vec<Vec<f64>>,
}

fn instance_grad(
    m: &Model,
    item: &Item,
    level: Level,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<InstanceOut>> {
    let penalize = item.penalize && lambda > 0.0;
    if item.gold.is_none() && !penalize {
        return Ok(None);
    }
    let mut g = Graph::new();
    let bound = m.bind(&mut g, true);
    let s = m.class_scores(&mut g, &bound, &item.tokens, level, Mode::Train, rng)?;
    let task = match &item.gold {
        Some(gold) => Some(task_loss(&mut g, level, s, gold)?),
        None => None,
    };
    let pen = if penalize {
        let p = level_probs(&mut g, level, s)?;
        penalty_term(&mut g, Label::NotSexist, p, lambda)?
    } else {
        None
    };
    let loss = match (task, pen) {
        (Some(a), Some(b)) => g.add(a, b)?,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => return Ok(None),
    };
    g.check_finite(loss, "training loss")?;
    g.backward(loss)?;
    let grads = bound
        .params
        .iter()
        .map(|&p| match g.grad(p) {
            Some(d) => d.to_vec(),
            None => vec![0.0; g.value(p).len()],
        })
        .collect();
    Ok(Some(InstanceOut {
        task: task.map_or(0.0, |v| g.value(v).item()),
        penalty: pen.map_or(0.0, |v| g.value(v).item()),
        grads,
    }))
}

fn dropout_rng(seed: u64, step: usize, pos: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((step as u64) << 32) | pos as u64);
    r
}

/// Infinite stream of indices, reshuffled every epoch.
struct Sampler {
    n: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        Sampler {
            n,
            order: Vec::new(),
            cursor: 0,
            rng,
        }
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.cursor == self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn scalar_task_loss(level: Level, scores: &[f64], gold: &[Label]) -> Result<f64> {
    if level.is_multilabel() {
        let t = crate::hierarchy::multi_hot(gold)?;
        let n = scores.len() as f64;
        Ok(scores
            .iter()
            .zip(&t)
            .map(|(&s, &y)| s.max(0.0) - s * y + (-s.abs()).exp().ln_1p())
            .sum::<f64>()
            / n)
    } else {
        let idx = level.index_of(gold[0])?;
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scores.iter().map(|&s| (s - m).exp()).sum::<f64>().ln();
        Ok(lse - scores[idx])
    }
}

/// Mean task loss and macro-F1 of the attached adapter on gold-routed dev
/// prompts.
fn validate(m: &Model, dev: &[(Vec<usize>, Vec<Label>)], level: Level) -> Result<(f64, f64)> {
    let scores: Vec<Vec<f64>> = dev
        .par_iter()
        .map(|(t, _)| m.class_logits(t, level.get()))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(dev.len());
    let mut golds = Vec::with_capacity(dev.len());
    for (s, (_, gold)) in scores.iter().zip(dev) {
        loss += scalar_task_loss(level, s, gold)?;
        preds.push(decide(level, &probs_from_scores(level, s)));
        golds.push(gold.clone());
    }
    let report = f1_scores(&preds, &golds, level)?;
    Ok((loss / dev.len() as f64, report.macro_f1))
}

/// Validation-plateau tracker.
#[derive(Clone, Debug)]
pub struct Plateau {
    patience: usize,
    best: Option<f64>,
    bad: usize,
}

impl Plateau {
    pub fn new(patience: usize) -> Self {
        Plateau {
            patience,
            best: None,
            bad: 0,
        }
    }

    /// Records one validation loss; returns whether it improved on the best
    /// and whether training should stop.
    pub fn observe(&mut self, val_loss: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|b| val_loss < b - PLATEAU_EPS);
        if improved {
            self.best = Some(val_loss);
            self.bad = 0;
        } else {
            self.bad += 1;
        }
        (improved, self.bad >= self.patience)
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

fn snapshot(m: &Model) -> Vec<Tensor> {
    m.trainable_tensors().into_iter().cloned().collect()
}

fn restore(m: &mut Model, snap: &[Tensor]) {
    for (t, s) in m.trainable_tensors_mut().into_iter().zip(snap) {
        t.data_mut().copy_from_slice(s.data());
    }
}

/// Optimizes the adapter attached to `m` over `items`.
pub(crate) fn train_attached(
    m: &mut Model,
    key: &str,
    level: Level,
    items: &[Item],
    dev: &[(Vec<usize>, Vec<Label>)],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Data(format!("no training instances for {key}")));
    }
    let started = Instant::now();
    let names = m.trainable_names();
    let mut state = AdamState::new(&m.trainable_tensors());
    let mut sampler = Sampler::new(items.len(), cfg.seed);
    let window = cfg.window();
    let mut events = Vec::new();
    let mut plateau = Plateau::new(cfg.patience);
    let mut best: Option<(usize, Vec<Tensor>)> = None;
    let mut reason = StopReason::MaxSteps;
    let mut last_step = 0;

    for step in 0..cfg.max_steps {
        let idx = sampler.take(window);
        let mut acc: Vec<Vec<f64>> = m.trainable_tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        let (mut task, mut pen) = (0.0, 0.0);
        for (mb, chunk) in idx.chunks(cfg.batch_size).enumerate() {
            let model: &Model = m;
            let outs: Vec<Option<InstanceOut>> = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut rng = dropout_rng(cfg.seed, step, mb * cfg.batch_size + j);
                    instance_grad(model, &items[i], level, cfg.lambda, &mut rng)
                })
                .collect::<Result<_>>()?;
            for o in outs.into_iter().flatten() {
                task += o.task;
                pen += o.penalty;
                for (a, g) in acc.iter_mut().zip(&o.grads) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
        }
        let inv = 1.0 / window as f64;
        for a in acc.iter_mut() {
            for x in a.iter_mut() {
                *x *= inv;
            }
        }
        let lr = lr_at(step, cfg.max_steps, cfg);
        adamw_step(&mut m.trainable_tensors_mut(), &acc, &names, &mut state, &cfg.adamw, lr)?;
        let done = step + 1;
        last_step = done;
        events.push(TrainEvent::Step {
            step: done,
            lr,
            task: task * inv,
            hierarchy: pen * inv,
            total: (task + pen) * inv,
        });

        if !dev.is_empty() && (done % cfg.eval_interval == 0 || done == cfg.max_steps) {
            let (val_loss, macro_f1) = validate(m, dev, level)?;
            let (improved, stop) = plateau.observe(val_loss);
            events.push(TrainEvent::Eval {
                step: done,
                val_loss,
                macro_f1,
                improved,
            });
            if improved {
                best = Some((done, snapshot(m)));
            }
            if stop {
                reason = StopReason::EarlyStop;
                break;
            }
        }
    }
    let best_step = best.as_ref().map(|b| b.0);
    if let Some((s, snap)) = &best {
        if *s != last_step {
            restore(m, snap);
        }
    }
    events.push(TrainEvent::Stop {
        step: last_step,
        reason,
        best_step,
    });
    Ok(TrainLog {
        key: key.to_string(),
        level,
        events,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

fn gold_parent(inst: &Instance, level: Level) -> Option<Label> {
    match level.get() {
        1 => None,
        2 => Some(inst.gold_l1),
        _ => Some(inst.gold_l2.unwrap_or(Label::NotSexist)),
    }
}

fn route_of(bank: &AdapterBank, level: Level, parent: Option<Label>, mode: RouteMode) -> Result<Option<String>> {
    let gold = if mode == RouteMode::Train { parent } else { None };
    let infer = if mode == RouteMode::Infer { parent } else { None };
    Ok(match bank.route(level, infer, mode, gold)? {
        Route::Adapter(k) => Some(k),
        Route::ShortCircuit => None,
    })
}

/// Trains every bank entry serving `level`. Tasks route on gold parents;
/// the consistency penalty covers instances whose level-1 prediction is
/// NOT_SEXIST, routed the way inference routes them when scoring raw child
/// confidences. One log per trained entry.
pub fn train_subtask(
    model: &mut Model,
    bank: &mut AdapterBank,
    level: Level,
    train: &[Instance],
    dev: &[Instance],
    cfg: &TrainConfig,
) -> Result<Vec<TrainLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let max_seq = model.config().max_seq;
    let refs: Vec<&Instance> = train.iter().collect();

    // Penalty routing: root predictions from the trained level-1 adapter,
    // and raw level-2 predictions for per-parent level-3 entries.
    let mut pen_route: Vec<Option<String>> = vec![None; train.len()];
    if level != Level::ONE && cfg.lambda > 0.0 {
        let key1 = route_of(bank, Level::ONE, None, RouteMode::Infer)?.expect("level 1 always routes");
        let p1 = score_level(model, bank, &key1, Level::ONE, &refs)?;
        let roots: Vec<usize> = (0..train.len())
            .filter(|&i| decide(Level::ONE, &p1[i])[0] == Label::NotSexist)
            .collect();
        let parents: Vec<Label> = if level == Level::THREE && bank.granularity() == Granularity::PerParent {
            let key2 = route_of(bank, Level::TWO, Some(Label::Sexist), RouteMode::Infer)?.expect("SEXIST routes");
            let items: Vec<&Instance> = roots.iter().map(|&i| &train[i]).collect();
            score_level(model, bank, &key2, Level::TWO, &items)?
                .iter()
                .map(|p| decide(Level::TWO, p)[0])
                .collect()
        } else {
            let p = if level == Level::TWO {
                Label::Sexist
            } else {
                Label::Direct
            };
            vec![p; roots.len()]
        };
        for (&i, parent) in roots.iter().zip(parents) {
            pen_route[i] = route_of(bank, level, Some(parent), RouteMode::Infer)?;
        }
    }
    let task_route: Vec<Option<String>> = train
        .iter()
        .map(|x| route_of(bank, level, gold_parent(x, level), RouteMode::Train))
        .collect::<Result<_>>()?;

    let mut logs = Vec::new();
    for key in bank.keys_for(level) {
        let mut items = Vec::with_capacity(train.len());
        for (i, x) in train.iter().enumerate() {
            let routed = task_route[i].as_deref() == Some(key.as_str());
            items.push(Item {
                tokens: format_prompt(x, level, None, max_seq)?.input().to_vec(),
                gold: routed.then(|| x.gold(level)),
                penalize: pen_route[i].as_deref() == Some(key.as_str()),
            });
        }
        if items.iter().all(|it| it.gold.is_none()) {
            return Err(Error::Data(format!("no training instance routes to {key}")));
        }
        let mut dev_items = Vec::new();
        for x in dev {
            if route_of(bank, level, gold_parent(x, level), RouteMode::Train)?.as_deref() == Some(key.as_str()) {
                dev_items.push((format_prompt(x, level, None, max_seq)?.input().to_vec(), x.gold(level)));
            }
        }
        let log = bank.with_adapter(model, &key, |m| train_attached(m, &key, level, &items, &dev_items, cfg))?;
        logs.push(log);
    }
    Ok(logs)
}

/// Levels 1, 2, 3 in order; each later level sees the adapters trained
/// before it.
pub fn train_all(
    model: &mut Model,
    bank: &mut AdapterBank,
    train: &[Instance],
    dev: &[Instance],
    cfg: &TrainConfig,
) -> Result<Vec<TrainLog>> {
    let mut logs = Vec::new();
    for level in Level::ALL {
        logs.extend(train_subtask(model, bank, level, train, dev, cfg)?);
    }
    Ok(logs)
}
