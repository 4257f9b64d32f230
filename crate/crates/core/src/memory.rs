//! Labeled segment memory: stores, inheritance at spawn, role-scoped
//! projection, snapshots and contamination tracking.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::label::SensitivityLabel;
use crate::network::{AgentId, NetworkState};
use crate::{Mode, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegId(pub u64);

impl std::fmt::Display for SegId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Ground-truth tag marking adversarial content. Never inferred from content.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PayloadMarker(pub String);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySegment {
    pub id: SegId,
    pub key: String,
    pub label: SensitivityLabel,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<PayloadMarker>,
    /// Agent whose store the segment was created in; `None` for the shared workspace.
    pub origin: Option<AgentId>,
    pub created_at: Tick,
    pub revised_at: Tick,
}

impl MemorySegment {
    pub fn content_digest(&self) -> String {
        content_digest(&self.content)
    }

    pub fn is_payload(&self) -> bool {
        self.payload.is_some()
    }
}

pub fn content_digest(content: &str) -> String {
    hex::encode(Sha256::digest(content.as_bytes()))
}

/// An agent's memory `m(a)`: an ordered collection of segments with
/// distinct ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MemoryStore {
    owner: Option<AgentId>,
    segments: Vec<MemorySegment>,
    #[serde(skip)]
    payloads: usize,
}

impl MemoryStore {
    pub fn new(owner: Option<AgentId>) -> Self {
        Self {
            owner,
            segments: Vec::new(),
            payloads: 0,
        }
    }

    pub fn from_segments(
        owner: Option<AgentId>,
        segments: impl IntoIterator<Item = MemorySegment>,
    ) -> Result<Self> {
        let mut store = Self::new(owner);
        for seg in segments {
            store.push(seg)?;
        }
        Ok(store)
    }

    pub fn owner(&self) -> Option<AgentId> {
        self.owner
    }

    pub fn push(&mut self, seg: MemorySegment) -> Result<()> {
        if self.get(seg.id).is_some() {
            return Err(Error::DuplicateSegment(seg.id));
        }
        if seg.is_payload() {
            self.payloads += 1;
        }
        self.segments.push(seg);
        Ok(())
    }

    /// Replaces the content of an existing segment. The label never changes.
    pub fn overwrite(&mut self, id: SegId, content: &str, at: Tick) -> Result<()> {
        let seg = self
            .segments
            .iter_mut()
            .find(|s| s.id == id)
            .ok_or(Error::UnknownSegment(id))?;
        seg.content = content.to_string();
        seg.revised_at = at;
        Ok(())
    }

    pub fn get(&self, id: SegId) -> Option<&MemorySegment> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn get_by_key(&self, key: &str) -> Option<&MemorySegment> {
        self.segments.iter().find(|s| s.key == key)
    }

    pub fn segments(&self) -> &[MemorySegment] {
        &self.segments
    }

    pub fn ids(&self) -> BTreeSet<SegId> {
        self.segments.iter().map(|s| s.id).collect()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Cached: true iff some held segment carries a payload marker.
    pub fn is_contaminated(&self) -> bool {
        self.payloads > 0
    }

    /// Digest over ids, labels and contents in order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.segments {
            h.update(s.id.0.to_le_bytes());
            h.update(s.label.rank().to_le_bytes());
            h.update((s.content.len() as u64).to_le_bytes());
            h.update(s.content.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryMode {
    InheritFull,
    InheritPartial,
    AgentAgnostic,
}

impl std::fmt::Display for MemoryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MemoryMode::InheritFull => "inherit-full",
            MemoryMode::InheritPartial => "inherit-partial",
            MemoryMode::AgentAgnostic => "agent-agnostic",
        })
    }
}

/// `π_c(m)`: keeps segments whose label is dominated by `clearance`,
/// preserving order.
pub fn project(store: &MemoryStore, clearance: &SensitivityLabel) -> MemoryStore {
    let mut out = MemoryStore::new(store.owner);
    for seg in store.segments.iter().filter(|s| clearance.dominates(&s.label)) {
        // ids are already distinct in `store`
        out.push(seg.clone()).expect("distinct ids");
    }
    out
}

/// Initializes a child's memory from its parent's store.
///
/// In permissive mode the declared mode is applied verbatim; in enforced mode
/// the permissive result is additionally projected onto `child_clearance`.
/// The returned store has no owner yet.
pub fn inherit(
    parent: &MemoryStore,
    mode: MemoryMode,
    selector: Option<&BTreeSet<SegId>>,
    enforcement: Mode,
    child_clearance: &SensitivityLabel,
) -> Result<MemoryStore> {
    let copied = match mode {
        MemoryMode::InheritFull => parent.segments.clone(),
        MemoryMode::InheritPartial => {
            let selector = selector.ok_or_else(|| {
                Error::InvalidSpec("inherit-partial requires a selector".into())
            })?;
            if let Some(missing) = selector.iter().find(|id| parent.get(**id).is_none()) {
                return Err(Error::BadSelector(*missing));
            }
            parent
                .segments
                .iter()
                .filter(|s| selector.contains(&s.id))
                .cloned()
                .collect()
        }
        MemoryMode::AgentAgnostic => Vec::new(),
    };
    let store = MemoryStore::from_segments(None, copied)?;
    Ok(match enforcement {
        Mode::Permissive => store,
        Mode::Enforced => project(&store, child_clearance),
    })
}

/// Frozen copy `m(a)|_{t0}` of a store.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    taken_at: Tick,
    segments: Vec<SnapshotEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub id: SegId,
    pub key: String,
    pub content: String,
}

impl MemorySnapshot {
    pub fn taken_at(&self) -> Tick {
        self.taken_at
    }

    pub fn entries(&self) -> &[SnapshotEntry] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn get(&self, id: SegId) -> Option<&SnapshotEntry> {
        self.segments.iter().find(|e| e.id == id)
    }

    /// Ids present in `store` that are new or whose content changed since
    /// the snapshot, in store order.
    pub fn diff(&self, store: &MemoryStore) -> Vec<SegId> {
        let before: BTreeMap<SegId, &str> = self
            .segments
            .iter()
            .map(|e| (e.id, e.content.as_str()))
            .collect();
        store
            .segments
            .iter()
            .filter(|s| before.get(&s.id) != Some(&s.content.as_str()))
            .map(|s| s.id)
            .collect()
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.taken_at.to_le_bytes());
        for e in &self.segments {
            h.update(e.id.0.to_le_bytes());
            h.update((e.content.len() as u64).to_le_bytes());
            h.update(e.content.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn snapshot(store: &MemoryStore, t: Tick) -> MemorySnapshot {
    MemorySnapshot {
        taken_at: t,
        segments: store
            .segments
            .iter()
            .map(|s| SnapshotEntry {
                id: s.id,
                key: s.key.clone(),
                content: s.content.clone(),
            })
            .collect(),
    }
}

/// Every agent (live or tombstoned) whose store holds a payload-marked segment.
pub fn contamination_reach(state: &NetworkState) -> BTreeSet<AgentId> {
    state
        .agents()
        .filter(|a| a.memory.is_contaminated())
        .map(|a| a.id)
        .collect()
}
