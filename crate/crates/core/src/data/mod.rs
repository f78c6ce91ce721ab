//! Corpus records, JSONL ingestion, prompt assembly and the synthetic
//! bilingual generator.

mod prompt;
mod synth;
pub mod tokenizer;

pub use prompt::{format_prompt, system_prompt, Prompt};
pub use synth::{
    gen_synthetic, write_corpus, CorpusManifest, CueTable, LabelDist, SplitEntry, SynthConfig, SynthCorpus,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hierarchy::{Label, Level};

/// Encodes an absent child label in files.
pub const ABSENT: &str = "-";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    En,
    Es,
}

impl Lang {
    pub const ALL: [Lang; 2] = [Lang::En, Lang::Es];

    pub fn as_str(self) -> &'static str {
        match self {
            Lang::En => "en",
            Lang::Es => "es",
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lang {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "en" => Ok(Lang::En),
            "es" => Ok(Lang::Es),
            _ => Err(Error::Data(format!("unknown language {s:?}"))),
        }
    }
}

/// One text with its gold labels. Children are present exactly when the
/// root is SEXIST.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub lang: Lang,
    pub text: String,
    pub gold_l1: Label,
    pub gold_l2: Option<Label>,
    pub gold_l3: Option<Vec<Label>>,
}

impl Instance {
    pub fn validate(&self) -> Result<()> {
        if self.gold_l1.level() != Level::ONE {
            return Err(Error::Data(format!("{} is not a level-1 label", self.gold_l1)));
        }
        match (self.gold_l1, &self.gold_l2, &self.gold_l3) {
            (Label::NotSexist, None, None) => Ok(()),
            (Label::NotSexist, _, _) => Err(Error::Data("NOT_SEXIST instance carries child labels".into())),
            (_, Some(l2), Some(l3)) => {
                Level::TWO.index_of(*l2)?;
                if l3.is_empty() {
                    return Err(Error::Data("SEXIST instance has an empty category set".into()));
                }
                for (i, l) in l3.iter().enumerate() {
                    Level::THREE.index_of(*l)?;
                    if l3[..i].contains(l) {
                        return Err(Error::Data(format!("category {l} listed twice")));
                    }
                }
                Ok(())
            }
            _ => Err(Error::Data("SEXIST instance is missing child labels".into())),
        }
    }

    pub fn is_sexist(&self) -> bool {
        self.gold_l1 == Label::Sexist
    }

    /// Gold labels of `level`: one for levels 1-2, the category set for 3,
    /// empty when the level does not apply.
    pub fn gold(&self, level: Level) -> Vec<Label> {
        match level.get() {
            1 => vec![self.gold_l1],
            2 => self.gold_l2.into_iter().collect(),
            _ => self.gold_l3.clone().unwrap_or_default(),
        }
    }

    /// Every gold label across levels, root first.
    pub fn label_set(&self) -> Vec<Label> {
        Level::ALL.iter().flat_map(|&l| self.gold(l)).collect()
    }

    pub fn from_json(v: &Value) -> Result<Instance> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Data("record is not a JSON object".into()))?;
        let field =
            |k: &str| -> Result<&Value> { obj.get(k).ok_or_else(|| Error::Data(format!("missing field {k:?}"))) };
        let string = |k: &str| -> Result<&str> {
            field(k)?
                .as_str()
                .ok_or_else(|| Error::Data(format!("field {k:?} is not a string")))
        };
        let gold_l2 = match string("label_task2")? {
            ABSENT => None,
            s => Some(s.parse::<Label>()?),
        };
        let gold_l3 = match field("labels_task3")? {
            Value::String(s) if s == ABSENT => None,
            Value::Array(items) => Some(
                items
                    .iter()
                    .map(|x| {
                        x.as_str()
                            .ok_or_else(|| Error::Data("labels_task3 entries must be strings".into()))?
                            .parse::<Label>()
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => return Err(Error::Data("labels_task3 must be a list or \"-\"".into())),
        };
        let inst = Instance {
            id: string("id")?.to_string(),
            lang: string("lang")?.parse()?,
            text: string("text")?.to_string(),
            gold_l1: string("label_task1")?.parse()?,
            gold_l2,
            gold_l3,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn record(&self) -> Record<'_> {
        Record {
            id: &self.id,
            lang: self.lang.as_str(),
            text: &self.text,
            label_task1: self.gold_l1.as_str(),
            label_task2: self.gold_l2.map_or(ABSENT, Label::as_str),
            labels_task3: match &self.gold_l3 {
                None => ABSENT.into(),
                Some(ls) => ls.iter().map(|l| Value::from(l.as_str())).collect(),
            },
        }
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self.record()).expect("record is plain data")
    }

    /// One JSONL line, fields in file order.
    pub fn to_line(&self) -> String {
        serde_json::to_string(&self.record()).expect("record is plain data")
    }
}

#[derive(Serialize)]
struct Record<'a> {
    id: &'a str,
    lang: &'a str,
    text: &'a str,
    label_task1: &'a str,
    label_task2: &'a str,
    labels_task3: Value,
}

/// Parses JSONL text; errors name the 1-based line.
pub fn parse_jsonl(text: &str) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(line)
            .map_err(|e| Error::Data(e.to_string()))
            .and_then(|v| Instance::from_json(&v));
        match parsed {
            Ok(inst) => out.push(inst),
            Err(Error::Data(msg)) => return Err(Error::Data(format!("line {}: {msg}", i + 1))),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn parse_dataset(path: &Path) -> Result<Vec<Instance>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        e => e,
    })
}

pub fn to_jsonl(instances: &[Instance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&inst.to_line());
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, instances: &[Instance]) -> Result<()> {
    std::fs::write(path, to_jsonl(instances)).map_err(|e| Error::io(path, e))
}

/// Instances whose gold root admits `level` (all for level 1, SEXIST only
/// otherwise).
pub fn eligible(instances: &[Instance], level: Level) -> Vec<&Instance> {
    instances
        .iter()
        .filter(|i| level == Level::ONE || i.is_sexist())
        .collect()
}
