//! The shared workspace: a store visible to every agent, plus the simulated
//! filesystem effects produced by tool invocations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{MemorySegment, MemoryStore, SegId};
use crate::network::AgentId;
use crate::registry::{tools, ToolId};
use crate::revision::Validity;
use crate::Tick;

/// Side effect of a simulated tool call. Purely symbolic; nothing touches
/// the host.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", content = "target", rename_all = "kebab-case")]
pub enum ToolEffect {
    MarkedExecutable(String),
    Executed(String),
    PersistenceRegistered(String),
    FileWritten(String),
    Fetched(String),
    None,
}

/// Provenance of a committed workspace value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub agent: AgentId,
    pub key: String,
    pub value: String,
    pub source: SegId,
    pub observed_at: Tick,
    pub validity: Validity,
    pub at: Tick,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Workspace {
    store: MemoryStore,
    keys: BTreeMap<String, SegId>,
    executable: BTreeSet<String>,
    executed: Vec<String>,
    persistence: Vec<String>,
    files: Vec<String>,
    fetched: Vec<String>,
    commits: Vec<CommitRecord>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    pub fn get(&self, key: &str) -> Option<&MemorySegment> {
        self.keys.get(key).and_then(|id| self.store.get(*id))
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.get(key).map(|s| s.content.as_str())
    }

    pub fn seg_id(&self, key: &str) -> Option<SegId> {
        self.keys.get(key).copied()
    }

    pub fn values(&self) -> BTreeMap<String, String> {
        self.keys
            .iter()
            .filter_map(|(k, id)| self.store.get(*id).map(|s| (k.clone(), s.content.clone())))
            .collect()
    }

    pub fn is_executable(&self, name: &str) -> bool {
        self.executable.contains(name)
    }

    pub fn executable(&self) -> &BTreeSet<String> {
        &self.executable
    }

    pub fn executed(&self) -> &[String] {
        &self.executed
    }

    pub fn persistence(&self) -> &[String] {
        &self.persistence
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn fetched(&self) -> &[String] {
        &self.fetched
    }

    pub fn commits(&self) -> &[CommitRecord] {
        &self.commits
    }

    pub(crate) fn insert(&mut self, segment: MemorySegment) -> Result<()> {
        let (key, id) = (segment.key.clone(), segment.id);
        self.store.push(segment)?;
        self.keys.insert(key, id);
        Ok(())
    }

    pub(crate) fn overwrite(&mut self, id: SegId, content: &str, at: Tick) -> Result<()> {
        self.store.overwrite(id, content, at)
    }

    pub(crate) fn record_commit(&mut self, record: CommitRecord) {
        self.commits.push(record);
    }

    /// Computes the effect of `tool` on `target` without applying it.
    pub(crate) fn plan(&self, tool: &ToolId, target: Option<&str>) -> Result<ToolEffect> {
        let need = |what: &str| {
            target.map(str::to_owned).ok_or_else(|| Error::ToolFailure {
                tool: tool.clone(),
                reason: format!("missing {what}"),
            })
        };
        Ok(match tool.as_str() {
            tools::FS_CHMOD => {
                let t = need("target file")?;
                if !self.keys.contains_key(&t) {
                    return Err(Error::ToolFailure {
                        tool: tool.clone(),
                        reason: format!("no such file {t}"),
                    });
                }
                ToolEffect::MarkedExecutable(t)
            }
            tools::EXEC => {
                let t = need("target file")?;
                if !self.executable.contains(&t) {
                    return Err(Error::ToolFailure {
                        tool: tool.clone(),
                        reason: format!("{t} is not executable"),
                    });
                }
                ToolEffect::Executed(t)
            }
            tools::AUTOSTART_REGISTER => ToolEffect::PersistenceRegistered(need("target")?),
            tools::FS_WRITE => ToolEffect::FileWritten(need("target file")?),
            tools::WEB_FETCH => ToolEffect::Fetched(need("url")?),
            _ => ToolEffect::None,
        })
    }

    pub(crate) fn apply_effect(&mut self, effect: &ToolEffect) {
        match effect {
            ToolEffect::MarkedExecutable(t) => {
                self.executable.insert(t.clone());
            }
            ToolEffect::Executed(t) => self.executed.push(t.clone()),
            ToolEffect::PersistenceRegistered(t) => self.persistence.push(t.clone()),
            ToolEffect::FileWritten(t) => self.files.push(t.clone()),
            ToolEffect::Fetched(t) => self.fetched.push(t.clone()),
            ToolEffect::None => {}
        }
    }
}
