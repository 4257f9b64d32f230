//! Agent Capability Registry: registration-time policy store (PAP), the
//! decision point (PDP) and the outcome types returned by the enforcement
//! point. The enforcement point itself is [`crate::kernel::Kernel::intercept`],
//! since it needs the tool surface and network state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{AgentId, Capability, NetworkState, Role};
use crate::Tick;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolId(pub String);

impl ToolId {
    pub fn new(name: impl Into<String>) -> Self {
        ToolId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ToolId {
    fn from(s: &str) -> Self {
        ToolId(s.to_string())
    }
}

/// Names of the simulated tool surface.
pub mod tools {
    pub const READ_SEGMENT: &str = "read_segment";
    pub const WRITE_SEGMENT: &str = "write_segment";
    pub const EXEC: &str = "exec";
    pub const FS_WRITE: &str = "fs_write";
    pub const FS_CHMOD: &str = "fs_chmod";
    pub const AUTOSTART_REGISTER: &str = "autostart_register";
    pub const WEB_FETCH: &str = "web_fetch";

    pub const ALL: [&str; 7] = [
        READ_SEGMENT,
        WRITE_SEGMENT,
        EXEC,
        FS_WRITE,
        FS_CHMOD,
        AUTOSTART_REGISTER,
        WEB_FETCH,
    ];
}

/// `τ`: role name → authorized tools.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoleResourceMap {
    entries: BTreeMap<String, BTreeSet<ToolId>>,
}

impl RoleResourceMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, role: impl Into<String>, tools: impl IntoIterator<Item = ToolId>) {
        self.entries.insert(role.into(), tools.into_iter().collect());
    }

    pub fn resources(&self, role: &str) -> Option<&BTreeSet<ToolId>> {
        self.entries.get(role)
    }

    pub fn roles(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// `(κ(b), φ(b))`, frozen at registration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub agent: AgentId,
    pub capabilities: BTreeSet<Capability>,
    pub resources: BTreeSet<ToolId>,
    pub registered_at: Tick,
}

impl RegistryEntry {
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("entry serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Registry {
    entries: BTreeMap<AgentId, RegistryEntry>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `Φ.register(b, κ(b), φ(b))` with `φ(b) = τ(ρ(b))`.
    pub fn register(
        &mut self,
        agent: AgentId,
        capabilities: BTreeSet<Capability>,
        role: &Role,
        map: &RoleResourceMap,
        at: Tick,
    ) -> Result<&RegistryEntry> {
        if self.entries.contains_key(&agent) {
            return Err(Error::AlreadyRegistered(agent));
        }
        let resources = map
            .resources(&role.name)
            .ok_or_else(|| Error::UnknownRole(role.name.clone()))?
            .clone();
        let entry = RegistryEntry {
            agent,
            capabilities,
            resources,
            registered_at: at,
        };
        Ok(self.entries.entry(agent).or_insert(entry))
    }

    /// Inserts a previously computed entry (used when replaying traces).
    pub(crate) fn restore(&mut self, entry: RegistryEntry) -> Result<()> {
        if self.entries.contains_key(&entry.agent) {
            return Err(Error::AlreadyRegistered(entry.agent));
        }
        self.entries.insert(entry.agent, entry);
        Ok(())
    }

    pub fn entry(&self, agent: AgentId) -> Option<&RegistryEntry> {
        self.entries.get(&agent)
    }

    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    pub fn decide(&self, agent: AgentId, action: &Action, net: &NetworkState) -> PolicyDecision {
        match self.entries.get(&agent) {
            Some(entry) => decide_entry(entry, action, net),
            None => PolicyDecision::deny(agent, action.clone(), Reason::Unregistered),
        }
    }
}

/// Something an agent may attempt: a tool invocation (checked against `φ`)
/// or a structural operation (checked against `κ`).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "name", rename_all = "kebab-case")]
pub enum Action {
    Tool(ToolId),
    Structural(Capability),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Tool(t) => write!(f, "tool:{t}"),
            Action::Structural(c) => write!(f, "cap:{c}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Permit,
    Deny,
}

/// Machine-readable reason codes attached to every decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    ToolGranted,
    CapabilityGranted,
    ParentOfTarget,
    RootAuthority,
    Unregistered,
    ToolNotGranted,
    CapabilityNotHeld,
    KillSibling,
    KillWithoutEdge,
    KillRoot,
}

impl Reason {
    pub fn code(&self) -> &'static str {
        match self {
            Reason::ToolGranted => "tool-granted",
            Reason::CapabilityGranted => "capability-granted",
            Reason::ParentOfTarget => "parent-of-target",
            Reason::RootAuthority => "root-authority",
            Reason::Unregistered => "unregistered",
            Reason::ToolNotGranted => "tool-not-granted",
            Reason::CapabilityNotHeld => "capability-not-held",
            Reason::KillSibling => "kill-sibling",
            Reason::KillWithoutEdge => "kill-without-edge",
            Reason::KillRoot => "kill-root",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub verdict: Verdict,
    pub reason: Reason,
    pub agent: AgentId,
    pub action: Action,
}

impl PolicyDecision {
    fn permit(agent: AgentId, action: Action, reason: Reason) -> Self {
        Self {
            verdict: Verdict::Permit,
            reason,
            agent,
            action,
        }
    }

    fn deny(agent: AgentId, action: Action, reason: Reason) -> Self {
        Self {
            verdict: Verdict::Deny,
            reason,
            agent,
            action,
        }
    }

    pub fn is_permit(&self) -> bool {
        self.verdict == Verdict::Permit
    }
}

/// The decision rule as a pure function of `(entry, action, E)`.
///
/// `kill(c)` is admitted only toward a direct child, or for the root toward
/// any other agent; explicit `kill(c)` grants in `κ` do not lift the edge
/// requirement.
pub fn decide_entry(entry: &RegistryEntry, action: &Action, net: &NetworkState) -> PolicyDecision {
    let agent = entry.agent;
    let a = action.clone();
    match action {
        Action::Tool(tool) => {
            if entry.resources.contains(tool) {
                PolicyDecision::permit(agent, a, Reason::ToolGranted)
            } else {
                PolicyDecision::deny(agent, a, Reason::ToolNotGranted)
            }
        }
        Action::Structural(Capability::Kill(target)) => {
            let target = *target;
            if target == net.root() {
                PolicyDecision::deny(agent, a, Reason::KillRoot)
            } else if net.has_edge(agent, target) {
                PolicyDecision::permit(agent, a, Reason::ParentOfTarget)
            } else if agent == net.root() {
                PolicyDecision::permit(agent, a, Reason::RootAuthority)
            } else if net.is_sibling(agent, target) {
                PolicyDecision::deny(agent, a, Reason::KillSibling)
            } else {
                PolicyDecision::deny(agent, a, Reason::KillWithoutEdge)
            }
        }
        Action::Structural(cap) => {
            if entry.capabilities.contains(cap) {
                PolicyDecision::permit(agent, a, Reason::CapabilityGranted)
            } else {
                PolicyDecision::deny(agent, a, Reason::CapabilityNotHeld)
            }
        }
    }
}
