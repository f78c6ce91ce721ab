use serde::{Deserialize, Serialize};

use super::{HierPrediction, Label, Level};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierLossConfig {
    /// Weight of the consistency penalty.
    pub lambda: f64,
}

impl Default for HierLossConfig {
    fn default() -> Self {
        HierLossConfig { lambda: 0.1 }
    }
}

impl HierLossConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "lambda must be a nonnegative number, got {lambda}"
        )))
    }
}

/// Multi-hot target over the level-3 categories.
pub fn multi_hot(gold: &[Label]) -> Result<Vec<f64>> {
    let mut t = vec![0.0; Level::THREE.n_classes()];
    for &l in gold {
        t[Level::THREE.index_of(l)?] = 1.0;
    }
    Ok(t)
}

/// Cross-entropy of the softmaxed scores for levels 1-2, mean binary
/// cross-entropy over the five sigmoid scores for level 3.
pub fn task_loss(g: &mut Graph<'_>, level: Level, scores: Var, gold: &[Label]) -> Result<Var> {
    if level.is_multilabel() {
        if gold.is_empty() {
            return Err(Error::Data("level-3 gold set is empty".into()));
        }
        let t = multi_hot(gold)?;
        g.bce_with_logits(scores, &t)
    } else {
        let [y] = gold else {
            return Err(Error::Data(format!(
                "level {level} needs exactly one gold label, got {}",
                gold.len()
            )));
        };
        let idx = level.index_of(*y)?;
        g.cross_entropy(scores, idx)
    }
}

/// Class probabilities from verbalizer scores.
pub fn level_probs(g: &mut Graph<'_>, level: Level, scores: Var) -> Result<Var> {
    if level.is_multilabel() {
        Ok(g.sigmoid(scores))
    } else {
        g.softmax(scores, 1)
    }
}

/// One instance's penalty at one child level: `lambda · max_c p(c)` when the
/// predicted root is NOT_SEXIST, `None` otherwise.
pub fn penalty_term(g: &mut Graph<'_>, root_pred: Label, probs: Var, lambda: f64) -> Result<Option<Var>> {
    check_lambda(lambda)?;
    if root_pred != Label::NotSexist || lambda == 0.0 {
        return Ok(None);
    }
    let m = g.max(probs)?;
    Ok(Some(g.scale(m, lambda)))
}

/// `lambda · Σ_i Σ_{ℓ=2,3} 1[ŷ_i¹ = NOT_SEXIST] · max_c p_i^ℓ(c)` over
/// predictions that carry child probabilities.
pub fn hierarchy_loss(preds: &[HierPrediction], lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let mut total = 0.0;
    for p in preds.iter().filter(|p| p.y1 == Label::NotSexist) {
        for probs in [&p.p2, &p.p3].into_iter().flatten() {
            total += probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    Ok(lambda * total)
}

/// Graph form of [`hierarchy_loss`]: `probs[i]` holds the child-level
/// probability rows of instance `i`.
pub fn hierarchy_loss_graph(
    g: &mut Graph<'_>,
    roots: &[Label],
    probs: &[Vec<Var>],
    lambda: f64,
) -> Result<Option<Var>> {
    if roots.len() != probs.len() {
        return Err(Error::Contract("one probability list per root prediction".into()));
    }
    let mut acc: Option<Var> = None;
    for (&root, rows) in roots.iter().zip(probs) {
        for &p in rows {
            if let Some(t) = penalty_term(g, root, p, lambda)? {
                acc = Some(match acc {
                    Some(a) => g.add(a, t)?,
                    None => t,
                });
            }
        }
    }
    Ok(acc)
}

/// `Σ_ℓ L_task^ℓ + L_hierarchy`; absent terms contribute nothing.
pub fn total_loss(task: &[Option<f64>], hier: f64) -> Result<f64> {
    if task.first().copied().flatten().is_none() {
        return Err(Error::Contract("total loss needs the level-1 term".into()));
    }
    Ok(task.iter().flatten().sum::<f64>() + hier)
}
