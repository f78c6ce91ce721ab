use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{Label, Level};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub level: Level,
    pub per_class: BTreeMap<Label, ClassScore>,
    pub macro_f1: f64,
    /// F1 of SEXIST at level 1; equals `macro_f1` elsewhere.
    pub positive_f1: f64,
    /// Classes with neither predictions nor gold instances; they score 0.
    pub n_empty_classes: usize,
    pub n: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest precision, recall and F1 per class of `level`. Each entry
/// holds the labels of that level for one instance: exactly one for levels
/// 1-2, a set for level 3, empty when the level is absent.
pub fn f1_scores(preds: &[Vec<Label>], golds: &[Vec<Label>], level: Level) -> Result<F1Report> {
    if preds.len() != golds.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold instances",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Contract("cannot score an empty prediction list".into()));
    }
    for l in preds.iter().chain(golds).flatten() {
        level.index_of(*l)?;
    }
    let mut per_class = BTreeMap::new();
    let mut n_empty = 0;
    for &c in level.labels() {
        let (mut tp, mut fp, mut fneg) = (0, 0, 0);
        for (p, g) in preds.iter().zip(golds) {
            match (p.contains(&c), g.contains(&c)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
        if tp + fp + fneg == 0 {
            n_empty += 1;
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        let f1 = ratio(2 * tp, 2 * tp + fp + fneg);
        per_class.insert(
            c,
            ClassScore {
                precision,
                recall,
                f1,
                support: tp + fneg,
            },
        );
    }
    let macro_f1 = per_class.values().map(|s| s.f1).sum::<f64>() / per_class.len() as f64;
    let positive_f1 = if level == Level::ONE {
        per_class[&Label::Sexist].f1
    } else {
        macro_f1
    };
    Ok(F1Report {
        level,
        per_class,
        macro_f1,
        positive_f1,
        n_empty_classes: n_empty,
        n: preds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one(l: Label) -> Vec<Label> {
        vec![l]
    }

    #[test]
    fn perfect_predictions_score_one() {
        let golds = vec![one(Label::Sexist), one(Label::NotSexist), one(Label::Sexist)];
        let r = f1_scores(&golds, &golds, Level::ONE).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        let golds3 = vec![
            vec![Label::Objectification, Label::SexualViolence],
            vec![Label::IdeologicalAndInequality],
            vec![Label::StereotypingAndDominance, Label::MisogynyAndNonSexualViolence],
        ];
        assert_eq!(f1_scores(&golds3, &golds3, Level::THREE).unwrap().macro_f1, 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_binary() {
        let golds: Vec<_> = [Label::Sexist, Label::NotSexist]
            .iter()
            .cycle()
            .take(10)
            .map(|&l| one(l))
            .collect();
        let preds = vec![one(Label::Sexist); 10];
        let r = f1_scores(&preds, &golds, Level::ONE).unwrap();
        assert!((r.per_class[&Label::Sexist].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[&Label::NotSexist].f1, 0.0);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.positive_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors_and_empty_classes() {
        assert!(matches!(f1_scores(&[], &[], Level::ONE), Err(Error::Contract(_))));
        assert!(matches!(
            f1_scores(&[one(Label::Sexist)], &[], Level::ONE),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            f1_scores(&[one(Label::Direct)], &[one(Label::Direct)], Level::ONE),
            Err(Error::Data(_))
        ));
        let r = f1_scores(&[one(Label::Direct)], &[one(Label::Direct)], Level::TWO).unwrap();
        assert_eq!(r.n_empty_classes, 2);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_levels_match_no_class() {
        let preds = vec![vec![], one(Label::Direct)];
        let golds = vec![one(Label::Direct), vec![]];
        let r = f1_scores(&preds, &golds, Level::TWO).unwrap();
        assert_eq!(r.per_class[&Label::Direct].f1, 0.0);
        assert_eq!(r.per_class[&Label::Direct].support, 1);
    }

    proptest! {
        #[test]
        fn joint_shuffles_leave_scores_unchanged(seed in 0u64..1000, n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cats = Level::THREE.labels();
            let mut pick = |k: usize| -> Vec<Label> {
                let mut v = cats.to_vec();
                v.shuffle(&mut rng);
                v.truncate(k);
                v
            };
            let preds: Vec<_> = (0..n).map(|i| pick(i % 3)).collect();
            let golds: Vec<_> = (0..n).map(|i| pick(1 + i % 2)).collect();
            let base = f1_scores(&preds, &golds, Level::THREE).unwrap();
            let mut pairs: Vec<_> = preds.into_iter().zip(golds).collect();
            pairs.shuffle(&mut rng);
            let (p2, g2): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            prop_assert_eq!(base, f1_scores(&p2, &g2, Level::THREE).unwrap());
        }
    }
}
