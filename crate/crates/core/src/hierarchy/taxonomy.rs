use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every label of the three-level taxonomy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Sexist,
    NotSexist,
    Direct,
    Reported,
    Judgemental,
    IdeologicalAndInequality,
    StereotypingAndDominance,
    Objectification,
    SexualViolence,
    MisogynyAndNonSexualViolence,
}

/// Hierarchy level: 1 binary, 2 source intention, 3 multilabel category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Level(u8);

impl Level {
    pub const ONE: Level = Level(1);
    pub const TWO: Level = Level(2);
    pub const THREE: Level = Level(3);
    pub const ALL: [Level; 3] = [Level::ONE, Level::TWO, Level::THREE];

    pub fn new(level: u8) -> Result<Self> {
        if (1..=3).contains(&level) {
            Ok(Level(level))
        } else {
            Err(Error::Contract(format!("level must be 1, 2 or 3, got {level}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Labels of this level in score order.
    pub fn labels(self) -> &'static [Label] {
        match self.0 {
            1 => &LEVEL1,
            2 => &LEVEL2,
            _ => &LEVEL3,
        }
    }

    pub fn n_classes(self) -> usize {
        self.labels().len()
    }

    pub fn is_multilabel(self) -> bool {
        self.0 == 3
    }

    pub fn index_of(self, label: Label) -> Result<usize> {
        self.labels()
            .iter()
            .position(|&l| l == label)
            .ok_or_else(|| Error::Data(format!("{label} is not a level-{} label", self.0)))
    }
}

impl TryFrom<u8> for Level {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Level::new(v)
    }
}

impl From<Level> for u8 {
    fn from(l: Level) -> u8 {
        l.0
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

const LEVEL1: [Label; 2] = [Label::Sexist, Label::NotSexist];
const LEVEL2: [Label; 3] = [Label::Direct, Label::Reported, Label::Judgemental];
const LEVEL3: [Label; 5] = [
    Label::IdeologicalAndInequality,
    Label::StereotypingAndDominance,
    Label::Objectification,
    Label::SexualViolence,
    Label::MisogynyAndNonSexualViolence,
];

impl Label {
    pub const ALL: [Label; 10] = [
        Label::Sexist,
        Label::NotSexist,
        Label::Direct,
        Label::Reported,
        Label::Judgemental,
        Label::IdeologicalAndInequality,
        Label::StereotypingAndDominance,
        Label::Objectification,
        Label::SexualViolence,
        Label::MisogynyAndNonSexualViolence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Sexist => "SEXIST",
            Label::NotSexist => "NOT_SEXIST",
            Label::Direct => "DIRECT",
            Label::Reported => "REPORTED",
            Label::Judgemental => "JUDGEMENTAL",
            Label::IdeologicalAndInequality => "IDEOLOGICAL_AND_INEQUALITY",
            Label::StereotypingAndDominance => "STEREOTYPING_AND_DOMINANCE",
            Label::Objectification => "OBJECTIFICATION",
            Label::SexualViolence => "SEXUAL_VIOLENCE",
            Label::MisogynyAndNonSexualViolence => "MISOGYNY_AND_NON_SEXUAL_VIOLENCE",
        }
    }

    pub fn level(self) -> Level {
        match self {
            Label::Sexist | Label::NotSexist => Level::ONE,
            Label::Direct | Label::Reported | Label::Judgemental => Level::TWO,
            _ => Level::THREE,
        }
    }

    /// Position in [`Label::ALL`]; also the offset of its verbalizer token.
    pub fn ordinal(self) -> usize {
        Label::ALL.iter().position(|&l| l == self).expect("listed")
    }

    /// Valid parent-child transition: only SEXIST has descendants.
    pub fn is_valid_child_of(self, root: Label) -> bool {
        self.level() != Level::ONE && root == Label::Sexist
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown label {s:?}")))
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_cardinalities() {
        assert_eq!(Level::ONE.n_classes(), 2);
        assert_eq!(Level::TWO.n_classes(), 3);
        assert_eq!(Level::THREE.n_classes(), 5);
        assert!(Level::new(0).is_err() && Level::new(4).is_err());
    }

    #[test]
    fn not_sexist_has_no_children() {
        for l in Label::ALL {
            assert!(!l.is_valid_child_of(Label::NotSexist));
        }
        assert!(Label::Objectification.is_valid_child_of(Label::Sexist));
        assert!(!Label::NotSexist.is_valid_child_of(Label::Sexist));
    }

    #[test]
    fn names_round_trip() {
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
            assert_eq!(l.level().labels()[l.level().index_of(l).unwrap()], l);
        }
        assert!("sexist".parse::<Label>().is_err());
        assert!(Level::TWO.index_of(Label::Sexist).is_err());
    }
}
