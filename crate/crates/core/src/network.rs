//! The agent hierarchy `(A, E, a0)`: agent records, capabilities, spawn
//! specifications and structural validation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::SensitivityLabel;
use crate::memory::{MemoryMode, MemorySnapshot, MemoryStore, SegId};
use crate::Tick;

/// Agent identifier. Allocated monotonically and never reused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

impl FromStr for AgentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.strip_prefix('a')
            .unwrap_or(s)
            .parse()
            .map(AgentId)
            .map_err(|_| format!("bad agent id `{s}`"))
    }
}

/// Structural permissions. `Kill` is the only target-parameterized kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Capability {
    Spawn,
    Delegate,
    AccessMemory,
    Communicate,
    UserInteract,
    Kill(AgentId),
}

impl Capability {
    pub fn is_parameterized(&self) -> bool {
        matches!(self, Capability::Kill(_))
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capability::Spawn => f.write_str("spawn"),
            Capability::Delegate => f.write_str("delegate"),
            Capability::AccessMemory => f.write_str("access-memory"),
            Capability::Communicate => f.write_str("communicate"),
            Capability::UserInteract => f.write_str("user-interact"),
            Capability::Kill(t) => write!(f, "kill({t})"),
        }
    }
}

impl FromStr for Capability {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "spawn" => Capability::Spawn,
            "delegate" => Capability::Delegate,
            "access-memory" => Capability::AccessMemory,
            "communicate" => Capability::Communicate,
            "user-interact" => Capability::UserInteract,
            other => {
                let target = other
                    .strip_prefix("kill(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| format!("unknown capability `{other}`"))?;
                Capability::Kill(target.parse()?)
            }
        })
    }
}

impl TryFrom<String> for Capability {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Capability> for String {
    fn from(c: Capability) -> Self {
        c.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Role {
    pub name: String,
    pub clearance: SensitivityLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lifespan {
    OneTime,
    Persistent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interaction {
    SessionBased,
    TaskOriented,
}

/// What an agent last observed of a segment (by read or by its own write).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentView {
    pub content: String,
    pub at: Tick,
}

/// Local state `s(a)` plus bookkeeping the kernel needs for audits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AgentRecord {
    pub id: AgentId,
    pub name: String,
    pub role: Role,
    pub capabilities: BTreeSet<Capability>,
    pub memory: MemoryStore,
    pub lifespan: Lifespan,
    pub interaction: Interaction,
    pub alive: bool,
    pub parent: Option<AgentId>,
    pub declared_mode: Option<MemoryMode>,
    pub spawned_at: Tick,
    /// What the agent was initialized with.
    pub inherited: MemorySnapshot,
    pub views: BTreeMap<SegId, SegmentView>,
}

impl AgentRecord {
    pub fn can_interact_with_user(&self) -> bool {
        self.capabilities.contains(&Capability::UserInteract)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpawnSpec {
    pub name: String,
    pub role: Role,
    pub capabilities: BTreeSet<Capability>,
    pub memory_mode: MemoryMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<BTreeSet<SegId>>,
    pub lifespan: Lifespan,
    pub interaction: Interaction,
}

impl SpawnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.memory_mode == MemoryMode::InheritPartial && self.selector.is_none() {
            return Err(Error::InvalidSpec("inherit-partial requires a selector".into()));
        }
        if self.interaction == Interaction::SessionBased && self.lifespan != Lifespan::Persistent {
            return Err(Error::InvalidSpec(
                "session-based agents must be persistent".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NetworkState {
    agents: BTreeMap<AgentId, AgentRecord>,
    edges: BTreeSet<(AgentId, AgentId)>,
    root: AgentId,
    clock: Tick,
    next_id: u64,
}

impl NetworkState {
    pub(crate) fn with_root(root: AgentRecord) -> Self {
        let id = root.id;
        let mut agents = BTreeMap::new();
        agents.insert(id, root);
        Self {
            agents,
            edges: BTreeSet::new(),
            root: id,
            clock: 0,
            next_id: id.0 + 1,
        }
    }

    /// Builds a state without any structural checks. Intended for feeding
    /// deliberately malformed graphs to [`NetworkState::validate_arborescence`].
    pub fn from_parts(
        agents: impl IntoIterator<Item = AgentRecord>,
        edges: impl IntoIterator<Item = (AgentId, AgentId)>,
        root: AgentId,
    ) -> Self {
        let agents: BTreeMap<_, _> = agents.into_iter().map(|a| (a.id, a)).collect();
        let next_id = agents.keys().next_back().map_or(0, |a| a.0 + 1);
        Self {
            agents,
            edges: edges.into_iter().collect(),
            root,
            clock: 0,
            next_id,
        }
    }

    pub fn root(&self) -> AgentId {
        self.root
    }

    pub fn clock(&self) -> Tick {
        self.clock
    }

    pub(crate) fn advance_to(&mut self, t: Tick) {
        debug_assert!(t > self.clock || (t == 0 && self.clock == 0));
        self.clock = t;
    }

    pub(crate) fn peek_id(&self) -> AgentId {
        AgentId(self.next_id)
    }

    pub(crate) fn insert_child(&mut self, parent: AgentId, child: AgentRecord) {
        let id = child.id;
        self.next_id = self.next_id.max(id.0 + 1);
        self.agents.insert(id, child);
        self.edges.insert((parent, id));
    }

    pub fn agent(&self, id: AgentId) -> Result<&AgentRecord> {
        self.agents.get(&id).ok_or(Error::UnknownAgent(id))
    }

    pub(crate) fn agent_mut(&mut self, id: AgentId) -> Result<&mut AgentRecord> {
        self.agents.get_mut(&id).ok_or(Error::UnknownAgent(id))
    }

    pub fn live_agent(&self, id: AgentId) -> Result<&AgentRecord> {
        let a = self.agent(id)?;
        if !a.alive {
            return Err(Error::AgentNotAlive(id));
        }
        Ok(a)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentRecord> {
        self.agents.values()
    }

    pub fn agent_by_name(&self, name: &str) -> Option<&AgentRecord> {
        self.agents.values().find(|a| a.name == name)
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn edges(&self) -> &BTreeSet<(AgentId, AgentId)> {
        &self.edges
    }

    pub fn has_edge(&self, parent: AgentId, child: AgentId) -> bool {
        self.edges.contains(&(parent, child))
    }

    pub fn children(&self, id: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        self.edges
            .range((id, AgentId(0))..=(id, AgentId(u64::MAX)))
            .map(|&(_, c)| c)
    }

    pub fn parent_of(&self, id: AgentId) -> Option<AgentId> {
        self.agents.get(&id).and_then(|a| a.parent)
    }

    /// `{b : a ≺ b}`, excluding `a`.
    pub fn descendants(&self, a: AgentId) -> Result<BTreeSet<AgentId>> {
        self.agent(a)?;
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<AgentId> = self.children(a).collect();
        while let Some(b) = queue.pop_front() {
            if b != a && seen.insert(b) {
                queue.extend(self.children(b));
            }
        }
        Ok(seen)
    }

    pub fn is_sibling(&self, b: AgentId, c: AgentId) -> bool {
        b != c
            && matches!((self.parent_of(b), self.parent_of(c)), (Some(p), Some(q)) if p == q)
    }

    /// Whether `actor` holds kill authority toward `target`: an explicit
    /// `kill(target)` grant, the implicit grant toward a direct child, or the
    /// root's authority over the whole network.
    pub fn holds_kill(&self, actor: AgentId, target: AgentId) -> bool {
        actor == self.root
            || self.has_edge(actor, target)
            || self
                .agents
                .get(&actor)
                .is_some_and(|a| a.capabilities.contains(&Capability::Kill(target)))
    }

    /// `kill ∈ κ(a) ∧ ((a,b) ∈ E ∨ a = a0)`.
    pub fn termination_authorized(&self, actor: AgentId, target: AgentId) -> bool {
        target != self.root
            && self.holds_kill(actor, target)
            && (self.has_edge(actor, target) || actor == self.root)
    }

    pub fn validate_arborescence(&self) -> ValidationReport {
        let mut issues = Vec::new();
        // dense indices over the sorted agent ids
        let ids: Vec<AgentId> = self.agents.keys().copied().collect();
        let n = ids.len();
        let index = |a: AgentId| ids.binary_search(&a).ok();
        let mut parent_count = vec![0u32; n];
        // edges are sorted by parent, so each agent's children are contiguous
        let mut start = vec![0usize; n + 1];
        let mut targets = Vec::with_capacity(self.edges.len());
        let mut root_parents = Vec::new();
        for &(p, c) in &self.edges {
            let (pi, ci) = (index(p), index(c));
            for end in [pi, ci] {
                if end.is_none() {
                    issues.push(StructuralIssue::DanglingEdge { parent: p, child: c });
                }
            }
            if c == self.root {
                root_parents.push(p);
            }
            if let Some(ci) = ci {
                parent_count[ci] += 1;
                if let Some(pi) = pi {
                    start[pi + 1] += 1;
                    targets.push(ci);
                }
            }
        }
        for i in 0..n {
            start[i + 1] += start[i];
        }
        let children = |a: usize| &targets[start[a]..start[a + 1]];
        let root = index(self.root);
        if root.is_none() {
            issues.push(StructuralIssue::MissingRoot { root: self.root });
        }
        if !root_parents.is_empty() {
            issues.push(StructuralIssue::RootHasParent {
                parents: root_parents,
            });
        }
        for (i, &id) in ids.iter().enumerate() {
            if id == self.root {
                continue;
            }
            match parent_count[i] {
                0 => issues.push(StructuralIssue::NoParent { agent: id }),
                1 => {}
                _ => issues.push(StructuralIssue::MultipleParents {
                    agent: id,
                    parents: self
                        .edges
                        .iter()
                        .filter(|e| e.1 == id)
                        .map(|e| e.0)
                        .collect(),
                }),
            }
        }

        // Kahn peel; whatever survives lies on or below a cycle.
        let mut indeg = vec![0usize; n];
        for &c in &targets {
            indeg[c] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut peeled = vec![false; n];
        while let Some(a) = queue.pop_front() {
            peeled[a] = true;
            for &c in children(a) {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        let reaches_self = |from: usize| {
            let mut seen = vec![false; n];
            let mut stack = children(from).to_vec();
            while let Some(a) = stack.pop() {
                if a == from {
                    return true;
                }
                if !std::mem::replace(&mut seen[a], true) {
                    stack.extend(children(a));
                }
            }
            false
        };
        let on_cycle: Vec<AgentId> = (0..n)
            .filter(|&i| !peeled[i] && reaches_self(i))
            .map(|i| ids[i])
            .collect();
        if !on_cycle.is_empty() {
            issues.push(StructuralIssue::Cycle { agents: on_cycle });
        }

        if let Some(r) = root {
            let mut reach = vec![false; n];
            reach[r] = true;
            let mut stack = vec![r];
            while let Some(a) = stack.pop() {
                for &c in children(a) {
                    if !std::mem::replace(&mut reach[c], true) {
                        stack.push(c);
                    }
                }
            }
            for (i, &id) in ids.iter().enumerate() {
                if !reach[i] {
                    issues.push(StructuralIssue::Unreachable { agent: id });
                }
            }
        }
        ValidationReport { issues }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "kebab-case")]
pub enum StructuralIssue {
    MissingRoot { root: AgentId },
    RootHasParent { parents: Vec<AgentId> },
    NoParent { agent: AgentId },
    MultipleParents { agent: AgentId, parents: Vec<AgentId> },
    Cycle { agents: Vec<AgentId> },
    Unreachable { agent: AgentId },
    DanglingEdge { parent: AgentId, child: AgentId },
}

impl StructuralIssue {
    pub fn agents(&self) -> Vec<AgentId> {
        match self {
            StructuralIssue::MissingRoot { root } => vec![*root],
            StructuralIssue::RootHasParent { parents } => parents.clone(),
            StructuralIssue::NoParent { agent }
            | StructuralIssue::MultipleParents { agent, .. }
            | StructuralIssue::Unreachable { agent } => vec![*agent],
            StructuralIssue::Cycle { agents } => agents.clone(),
            StructuralIssue::DanglingEdge { parent, child } => vec![*parent, *child],
        }
    }
}

impl fmt::Display for StructuralIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[AgentId]| {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
        };
        match self {
            StructuralIssue::MissingRoot { root } => write!(f, "root {root} is not an agent"),
            StructuralIssue::RootHasParent { parents } => {
                write!(f, "root has parent(s) {}", list(parents))
            }
            StructuralIssue::NoParent { agent } => write!(f, "{agent} has no parent"),
            StructuralIssue::MultipleParents { agent, parents } => {
                write!(f, "{agent} has {} parents: {}", parents.len(), list(parents))
            }
            StructuralIssue::Cycle { agents } => write!(f, "cycle through {}", list(agents)),
            StructuralIssue::Unreachable { agent } => {
                write!(f, "{agent} is unreachable from the root")
            }
            StructuralIssue::DanglingEdge { parent, child } => {
                write!(f, "edge ({parent}, {child}) references an unknown agent")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<StructuralIssue>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn violating_agents(&self) -> BTreeSet<AgentId> {
        self.issues.iter().flat_map(StructuralIssue::agents).collect()
    }
}
