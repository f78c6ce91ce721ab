use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::f1::{f1_scores, F1Report};
use super::icm::{icm_with_stats, task_set, GoldStats, IcmConfig, LabelSet};
use crate::data::{Instance, Lang};
use crate::error::{Error, Result};
use crate::hierarchy::{LabelRecord, Level};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Icm,
    F1,
    All,
}

impl Metric {
    fn icm(self) -> bool {
        matches!(self, Metric::Icm | Metric::All)
    }

    fn f1(self) -> bool {
        matches!(self, Metric::F1 | Metric::All)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "icm" => Ok(Metric::Icm),
            "f1" => Ok(Metric::F1),
            "all" => Ok(Metric::All),
            _ => Err(Error::Config(format!("unknown metric {s:?}; expected icm, f1 or all"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskScores {
    pub level: Level,
    pub icm: Option<f64>,
    /// ICM of a perfect system on the same instances.
    pub icm_gold: Option<f64>,
    pub f1: Option<F1Report>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub n: usize,
    pub subtasks: Vec<SubtaskScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub icm_config: IcmConfig,
    pub overall: GroupScores,
    pub per_language: BTreeMap<Lang, GroupScores>,
}

/// Pairs each gold instance with the prediction of the same id, in gold
/// order.
pub fn align<'a>(preds: &'a [LabelRecord], golds: &[Instance]) -> Result<Vec<&'a LabelRecord>> {
    let mut by_id: HashMap<&str, &LabelRecord> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::Data(format!("duplicate prediction id {:?}", p.id)));
        }
    }
    let mut out = Vec::with_capacity(golds.len());
    for (i, g) in golds.iter().enumerate() {
        match by_id.get(g.id.as_str()) {
            Some(p) => out.push(*p),
            None => {
                return Err(Error::Data(format!(
                    "first divergence: gold line {} has id {:?} with no prediction",
                    i + 1,
                    g.id
                )))
            }
        }
    }
    if preds.len() != golds.len() {
        let gold_ids: std::collections::HashSet<&str> = golds.iter().map(|g| g.id.as_str()).collect();
        let extra = preds
            .iter()
            .position(|p| !gold_ids.contains(p.id.as_str()))
            .expect("lengths differ");
        return Err(Error::Data(format!(
            "first divergence: prediction line {} has id {:?} absent from gold",
            extra + 1,
            preds[extra].id
        )));
    }
    Ok(out)
}

fn group_scores(
    preds: &[&LabelRecord],
    golds: &[&Instance],
    stats: &GoldStats,
    metric: Metric,
    cfg: &IcmConfig,
) -> Result<GroupScores> {
    let mut subtasks = Vec::new();
    for level in Level::ALL {
        let (icm, icm_gold) = if metric.icm() {
            let ps: Vec<LabelSet> = preds
                .iter()
                .map(|p| task_set(p.l1, &p.labels(level), level))
                .collect::<Result<_>>()?;
            let gs: Vec<LabelSet> = golds
                .iter()
                .map(|g| task_set(g.gold_l1, &g.gold(level), level))
                .collect::<Result<_>>()?;
            (
                Some(icm_with_stats(&ps, &gs, stats, cfg)?),
                Some(icm_with_stats(&gs, &gs, stats, cfg)?),
            )
        } else {
            (None, None)
        };
        let f1 = if metric.f1() {
            let ps: Vec<_> = preds.iter().map(|p| p.labels(level)).collect();
            let gs: Vec<_> = golds.iter().map(|g| g.gold(level)).collect();
            Some(f1_scores(&ps, &gs, level)?)
        } else {
            None
        };
        subtasks.push(SubtaskScores {
            level,
            icm,
            icm_gold,
            f1,
        });
    }
    Ok(GroupScores {
        n: preds.len(),
        subtasks,
    })
}

/// Scores predictions against gold per language and over the pooled
/// instances. The ICM occurrence model is fitted once on the pooled gold.
pub fn evaluate_predictions(
    preds: &[LabelRecord],
    golds: &[Instance],
    metric: Metric,
    cfg: &IcmConfig,
) -> Result<MetricReport> {
    cfg.validate()?;
    if golds.is_empty() {
        return Err(Error::Data("gold file is empty".into()));
    }
    for p in preds {
        p.validate()?;
    }
    let aligned = align(preds, golds)?;
    let full: Vec<LabelSet> = golds
        .iter()
        .map(|g| LabelSet::new(&g.label_set()))
        .collect::<Result<_>>()?;
    let stats = GoldStats::new(&full, cfg.smoothing)?;
    let all: Vec<&Instance> = golds.iter().collect();
    let overall = group_scores(&aligned, &all, &stats, metric, cfg)?;
    let mut per_language = BTreeMap::new();
    for lang in Lang::ALL {
        let idx: Vec<usize> = (0..golds.len()).filter(|&i| golds[i].lang == lang).collect();
        if idx.is_empty() {
            continue;
        }
        let p: Vec<&LabelRecord> = idx.iter().map(|&i| aligned[i]).collect();
        let g: Vec<&Instance> = idx.iter().map(|&i| &golds[i]).collect();
        per_language.insert(lang, group_scores(&p, &g, &stats, metric, cfg)?);
    }
    Ok(MetricReport {
        metric,
        icm_config: *cfg,
        overall,
        per_language,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    /// Aligned plain-text table: one row per subtask and metric, one column
    /// per language plus the pooled overall.
    pub fn to_table(&self) -> String {
        let mut cols: Vec<(String, &GroupScores)> = self
            .per_language
            .iter()
            .map(|(l, g)| (l.as_str().to_string(), g))
            .collect();
        cols.push(("overall".to_string(), &self.overall));
        let mut rows: Vec<Vec<String>> = vec![std::iter::once("subtask".to_string())
            .chain(std::iter::once("metric".to_string()))
            .chain(cols.iter().map(|c| c.0.clone()))
            .collect()];
        type Pick = fn(&SubtaskScores) -> Option<f64>;
        let metrics: [(&str, Pick); 4] = [
            ("icm", |s| s.icm),
            ("icm_gold", |s| s.icm_gold),
            ("macro_f1", |s| s.f1.as_ref().map(|f| f.macro_f1)),
            ("positive_f1", |s| s.f1.as_ref().map(|f| f.positive_f1)),
        ];
        for (li, level) in Level::ALL.iter().enumerate() {
            for (name, pick) in metrics {
                if name == "positive_f1" && *level != Level::ONE {
                    continue;
                }
                if self.overall.subtasks[li].icm.is_none() && name.starts_with("icm") {
                    continue;
                }
                if self.overall.subtasks[li].f1.is_none() && name.ends_with("f1") {
                    continue;
                }
                let mut row = vec![level.to_string(), name.to_string()];
                row.extend(cols.iter().map(|c| cell(pick(&c.1.subtasks[li]))));
                rows.push(row);
            }
        }
        let mut n_row = vec!["".to_string(), "n".to_string()];
        n_row.extend(cols.iter().map(|c| c.1.n.to_string()));
        rows.push(n_row);
        render(&rows)
    }
}

/// Left-aligns the first column and right-aligns the rest.
pub(crate) fn render(rows: &[Vec<String>]) -> String {
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, s) in r.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            if c < 2 {
                let _ = write!(line, "{s:<w$}", w = widths[c]);
            } else {
                let _ = write!(line, "{s:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
