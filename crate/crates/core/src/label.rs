//! Sensitivity labels and the chain lattice they are drawn from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the configured sensitivity chain.
///
/// Labels order by `rank`; the name is carried along so traces stay readable
/// without the lattice at hand.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SensitivityLabel {
    rank: u16,
    name: String,
}

impl SensitivityLabel {
    pub fn rank(&self) -> u16 {
        self.rank
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `self ⊒ other`.
    pub fn dominates(&self, other: &SensitivityLabel) -> bool {
        self.rank >= other.rank
    }
}

impl std::fmt::Display for SensitivityLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name)
    }
}

/// A totally ordered set of sensitivity levels, bottom first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Lattice {
    levels: Vec<String>,
}

pub const PUBLIC: &str = "public";
pub const TASK_LOCAL: &str = "task-local";
pub const PRIVILEGED: &str = "privileged";

impl Default for Lattice {
    fn default() -> Self {
        Self {
            levels: vec![PUBLIC.into(), TASK_LOCAL.into(), PRIVILEGED.into()],
        }
    }
}

impl Lattice {
    pub fn new<I, S>(levels: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let levels: Vec<String> = levels.into_iter().map(Into::into).collect();
        if levels.is_empty() {
            return Err("lattice needs at least one level".into());
        }
        if levels.len() > u16::MAX as usize {
            return Err("lattice has too many levels".into());
        }
        for (i, l) in levels.iter().enumerate() {
            if l.is_empty() {
                return Err("lattice level names must be non-empty".into());
            }
            if levels[..i].contains(l) {
                return Err(format!("lattice level `{l}` is listed twice"));
            }
        }
        Ok(Self { levels })
    }

    pub fn label(&self, name: &str) -> Result<SensitivityLabel> {
        self.levels
            .iter()
            .position(|l| l == name)
            .map(|rank| SensitivityLabel {
                rank: rank as u16,
                name: name.to_string(),
            })
            .ok_or_else(|| Error::UnknownLevel(name.to_string()))
    }

    pub fn at(&self, rank: usize) -> Option<SensitivityLabel> {
        self.levels.get(rank).map(|name| SensitivityLabel {
            rank: rank as u16,
            name: name.clone(),
        })
    }

    pub fn bottom(&self) -> SensitivityLabel {
        self.at(0).expect("lattice is non-empty")
    }

    pub fn top(&self) -> SensitivityLabel {
        self.at(self.levels.len() - 1).expect("lattice is non-empty")
    }

    pub fn contains(&self, label: &SensitivityLabel) -> bool {
        self.levels.get(label.rank as usize) == Some(&label.name)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn levels(&self) -> impl Iterator<Item = SensitivityLabel> + '_ {
        (0..self.levels.len()).filter_map(|r| self.at(r))
    }
}

impl TryFrom<Vec<String>> for Lattice {
    type Error = String;

    fn try_from(levels: Vec<String>) -> Result<Self, String> {
        Lattice::new(levels)
    }
}

impl From<Lattice> for Vec<String> {
    fn from(l: Lattice) -> Self {
        l.levels
    }
}
