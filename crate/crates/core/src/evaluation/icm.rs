use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{Label, Level};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcmConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    /// Additive smoothing of the set-occurrence counts.
    pub smoothing: f64,
}

impl Default for IcmConfig {
    fn default() -> Self {
        IcmConfig {
            alpha1: 2.0,
            alpha2: 2.0,
            beta: 3.0,
            smoothing: 0.5,
        }
    }
}

impl IcmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing > 0.0) {
            return Err(Error::Config(format!(
                "ICM smoothing must be positive, got {}",
                self.smoothing
            )));
        }
        if ![self.alpha1, self.alpha2, self.beta].iter().all(|x| x.is_finite()) {
            return Err(Error::Config("ICM weights must be finite".into()));
        }
        Ok(())
    }
}

/// A label set as a bitmask over [`Label::ALL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelSet(u16);

impl LabelSet {
    /// Checks that the set is closed under its root: at most one level-1
    /// label, and descendants only under SEXIST.
    pub fn new(labels: &[Label]) -> Result<Self> {
        let mut bits = 0u16;
        for &l in labels {
            bits |= 1 << l.ordinal();
        }
        let set = LabelSet(bits);
        let has = |l: Label| set.contains(l);
        if has(Label::Sexist) && has(Label::NotSexist) {
            return Err(Error::Data("label set holds both root labels".into()));
        }
        if let Some(&l) = labels.iter().find(|l| l.level() != Level::ONE) {
            if !has(Label::Sexist) {
                return Err(Error::Data(format!("label {l} appears without its SEXIST ancestor")));
            }
        }
        Ok(set)
    }

    pub fn contains(self, l: Label) -> bool {
        self.0 & (1 << l.ordinal()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn is_subset_of(self, other: LabelSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn labels(self) -> Vec<Label> {
        Label::ALL.into_iter().filter(|&l| self.contains(l)).collect()
    }
}

/// The set scored for one subtask: the root alone at level 1, the root plus
/// that level's labels deeper down.
pub fn task_set(root: Label, level_labels: &[Label], level: Level) -> Result<LabelSet> {
    if level == Level::ONE {
        return LabelSet::new(&[root]);
    }
    let mut v = vec![root];
    v.extend_from_slice(level_labels);
    LabelSet::new(&v)
}

/// Occurrence model of label sets in a gold corpus:
/// `P(S) = (#{gold ⊇ S} + s) / (N + 2s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GoldStats {
    golds: Vec<LabelSet>,
    smoothing: f64,
}

impl GoldStats {
    pub fn new(golds: &[LabelSet], smoothing: f64) -> Result<Self> {
        if golds.is_empty() {
            return Err(Error::Data("gold corpus is empty".into()));
        }
        if !(smoothing > 0.0) {
            return Err(Error::Config(format!(
                "ICM smoothing must be positive, got {smoothing}"
            )));
        }
        Ok(GoldStats {
            golds: golds.to_vec(),
            smoothing,
        })
    }

    pub fn n(&self) -> usize {
        self.golds.len()
    }

    pub fn count(&self, s: LabelSet) -> usize {
        self.golds.iter().filter(|g| s.is_subset_of(**g)).count()
    }

    pub fn prob(&self, s: LabelSet) -> f64 {
        (self.count(s) as f64 + self.smoothing) / (self.n() as f64 + 2.0 * self.smoothing)
    }

    /// Information content `-log2 P(S)`.
    pub fn ic(&self, s: LabelSet) -> f64 {
        -self.prob(s).log2()
    }
}

/// `α1·IC(pred) + α2·IC(gold) − β·IC(pred ∪ gold)`.
pub fn icm(pred: LabelSet, gold: LabelSet, stats: &GoldStats, cfg: &IcmConfig) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Data("gold label set is empty".into()));
    }
    Ok(cfg.alpha1 * stats.ic(pred) + cfg.alpha2 * stats.ic(gold) - cfg.beta * stats.ic(pred.union(gold)))
}

/// Mean ICM over aligned sets, with the occurrence model fitted on `golds`.
pub fn icm_dataset(preds: &[LabelSet], golds: &[LabelSet], cfg: &IcmConfig) -> Result<f64> {
    let stats = GoldStats::new(golds, cfg.smoothing)?;
    icm_with_stats(preds, golds, &stats, cfg)
}

pub fn icm_with_stats(preds: &[LabelSet], golds: &[LabelSet], stats: &GoldStats, cfg: &IcmConfig) -> Result<f64> {
    cfg.validate()?;
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(Error::Contract(format!(
            "{} predicted sets for {} gold sets",
            preds.len(),
            golds.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &g) in preds.iter().zip(golds) {
        total += icm(p, g, stats, cfg)?;
    }
    Ok(total / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    fn set(ls: &[Label]) -> LabelSet {
        LabelSet::new(ls).unwrap()
    }

    fn fixture() -> (Vec<LabelSet>, Vec<LabelSet>) {
        let golds = vec![
            set(&[NotSexist]),
            set(&[Sexist, Direct, Objectification]),
            set(&[Sexist, Direct, IdeologicalAndInequality, Objectification]),
            set(&[Sexist, Reported, SexualViolence]),
        ];
        let preds = vec![
            set(&[Sexist, Judgemental, StereotypingAndDominance]),
            set(&[Sexist, Direct, Objectification]),
            set(&[Sexist, Direct, Objectification]),
            set(&[NotSexist]),
        ];
        (preds, golds)
    }

    #[test]
    fn hand_computed_table() {
        let (preds, golds) = fixture();
        let cfg = IcmConfig::default();
        let stats = GoldStats::new(&golds, 0.5).unwrap();
        // P = (count + 0.5) / 5
        assert_eq!(stats.count(set(&[Sexist])), 3);
        assert_eq!(stats.count(set(&[Sexist, Direct, Objectification])), 2);
        assert!((stats.ic(golds[1]) - 1.0).abs() < 1e-12);
        let ic_rare = 1.7369655941662061664;
        for i in [0, 2, 3] {
            assert!((stats.ic(golds[i]) - ic_rare).abs() < 1e-12);
        }
        let want = [
            0.15200309344504998496,
            1.0,
            0.26303440583379383358,
            -3.0179219079972623779,
        ];
        for (i, w) in want.iter().enumerate() {
            let got = icm(preds[i], golds[i], &stats, &cfg).unwrap();
            assert!((got - w).abs() < 1e-12, "{i}: {got}");
        }
        let mean = icm_dataset(&preds, &golds, &cfg).unwrap();
        assert!((mean - -0.40072110217960463985).abs() < 1e-12);
        let perfect = icm_dataset(&golds, &golds, &cfg).unwrap();
        assert!((perfect - 1.5527241956246546248).abs() < 1e-12);
    }

    #[test]
    fn flat_level_one_view() {
        let (preds, golds) = fixture();
        let root = |s: &LabelSet| set(&[if s.contains(Sexist) { Sexist } else { NotSexist }]);
        let p1: Vec<_> = preds.iter().map(root).collect();
        let stats = GoldStats::new(&golds, 0.5).unwrap();
        let got = icm_with_stats(
            &p1,
            &golds.iter().map(root).collect::<Vec<_>>(),
            &stats,
            &IcmConfig::default(),
        );
        assert!((got.unwrap() - -2.4740667889201999947).abs() < 1e-12);
    }

    #[test]
    fn self_identity_on_every_fixture_set() {
        let (preds, golds) = fixture();
        let stats = GoldStats::new(&golds, 0.5).unwrap();
        for s in preds.iter().chain(&golds) {
            let v = icm(*s, *s, &stats, &IcmConfig::default()).unwrap();
            assert!((v - stats.ic(*s)).abs() < 1e-12);
        }
    }

    /// Every closed set one label away from `g`: one label added, removed,
    /// or swapped for another, plus the root flipped.
    fn neighbours(g: LabelSet) -> Vec<LabelSet> {
        let labels = g.labels();
        let mut out = Vec::new();
        let mut push = |v: Vec<Label>| {
            if let Ok(s) = LabelSet::new(&v) {
                if s != g && !s.is_empty() {
                    out.push(s);
                }
            }
        };
        for l in Label::ALL {
            if !g.contains(l) {
                let mut v = labels.clone();
                v.push(l);
                push(v);
            }
        }
        for (i, &old) in labels.iter().enumerate() {
            let mut v = labels.clone();
            v.remove(i);
            push(v.clone());
            for l in Label::ALL
                .into_iter()
                .filter(|l| l.level() == old.level() && !g.contains(*l))
            {
                let mut w = v.clone();
                w.push(l);
                push(w);
            }
        }
        push(if g.contains(Sexist) {
            vec![NotSexist]
        } else {
            vec![Sexist]
        });
        out
    }

    #[test]
    fn gold_is_optimal_against_single_label_perturbations() {
        let (_, golds) = fixture();
        let cfg = IcmConfig::default();
        let perfect = icm_dataset(&golds, &golds, &cfg).unwrap();
        let mut checked = 0;
        for i in 0..golds.len() {
            for alt in neighbours(golds[i]) {
                let mut preds = golds.clone();
                preds[i] = alt;
                let score = icm_dataset(&preds, &golds, &cfg).unwrap();
                assert!(score <= perfect + 1e-12, "{:?} -> {:?}", golds[i], alt);
                checked += 1;
            }
        }
        assert!(checked > 30);
    }

    #[test]
    fn probabilities_respect_the_hierarchy() {
        let (preds, golds) = fixture();
        let stats = GoldStats::new(&golds, 0.5).unwrap();
        for s in preds.iter().chain(&golds) {
            let p = stats.prob(*s);
            assert!(p > 0.0 && p <= 1.0);
            let root = set(&[if s.contains(Sexist) { Sexist } else { NotSexist }]);
            assert!(p <= stats.prob(root));
            for l in s.labels().into_iter().filter(|l| l.level() != Level::ONE) {
                assert!(stats.prob(set(&[Sexist, l])) <= stats.prob(root));
                assert!(p <= stats.prob(set(&[Sexist, l])));
            }
        }
    }

    #[test]
    fn malformed_sets_are_data_errors() {
        assert!(matches!(LabelSet::new(&[Direct]), Err(Error::Data(_))));
        assert!(matches!(
            LabelSet::new(&[NotSexist, Objectification]),
            Err(Error::Data(_))
        ));
        assert!(matches!(LabelSet::new(&[NotSexist, Sexist]), Err(Error::Data(_))));
        let (_, golds) = fixture();
        let stats = GoldStats::new(&golds, 0.5).unwrap();
        let empty = LabelSet::new(&[]).unwrap();
        assert!(matches!(
            icm(golds[0], empty, &stats, &IcmConfig::default()),
            Err(Error::Data(_))
        ));
        assert!(matches!(GoldStats::new(&[], 0.5), Err(Error::Data(_))));
    }
}
