//! Scenario files: data model, parsing and reference validation.
//!
//! Scenarios are TOML documents with the top-level keys `scenario`, `tools`,
//! `roles`, `agents`, `workspace`, `behaviors`, `schedule` and `expected`.
//! The grammar is documented in `docs/FORMATS.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::checker::ViolationKind;
use crate::kernel::SiblingPolicy;
use crate::label::Lattice;
use crate::memory::MemoryMode;
use crate::network::{Capability, Interaction, Lifespan};
use crate::registry::tools;
use crate::report::DefenseKind;
use crate::Mode;

/// Names reserved for the pseudo-actors.
pub const USER: &str = "user";
pub const ADVERSARY: &str = "adversary";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub scenario: Meta,
    /// Tool universe. Empty means the standard simulated tool set.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tools: Vec<String>,
    pub roles: BTreeMap<String, RoleDecl>,
    pub agents: BTreeMap<String, AgentDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workspace: Vec<SegmentDecl>,
    #[serde(default)]
    pub behaviors: BTreeMap<String, Vec<Step>>,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub expected: ExpectedByMode,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub name: String,
    #[serde(default)]
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<Vec<String>>,
    #[serde(default)]
    pub sibling_policy: SiblingPolicy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleDecl {
    pub clearance: String,
    #[serde(default)]
    pub tools: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDecl {
    /// Absent for the root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub role: String,
    #[serde(default)]
    pub capabilities: Vec<String>,
    #[serde(default = "default_memory_mode")]
    pub memory_mode: MemoryMode,
    /// Keys of parent segments, for inherit-partial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<Vec<String>>,
    #[serde(default = "default_lifespan")]
    pub lifespan: Lifespan,
    #[serde(default = "default_interaction")]
    pub interaction: Interaction,
    /// Initial memory; root only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub memory: Vec<SegmentDecl>,
}

fn default_memory_mode() -> MemoryMode {
    MemoryMode::AgentAgnostic
}

fn default_lifespan() -> Lifespan {
    Lifespan::Persistent
}

fn default_interaction() -> Interaction {
    Interaction::TaskOriented
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDecl {
    pub key: String,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// One scripted action.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Step {
    Spawn {
        agent: String,
    },
    /// Write to the agent's own store.
    Remember {
        key: String,
        content: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// Write to the shared workspace.
    Write {
        key: String,
        content: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Read {
        key: String,
    },
    Invoke {
        tool: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
    },
    /// Commit `value` under `key`, justified by an earlier read of `source`.
    /// After a blocked commit the agent re-reads `source` and retries only
    /// if it now equals `expect`.
    Commit {
        key: String,
        value: String,
        source: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect: Option<String>,
    },
    Terminate {
        target: String,
    },
    /// Decide a suspended termination request addressed to this agent.
    Resolve {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
        approve: bool,
    },
    Send {
        to: String,
        text: String,
    },
    Inject {
        target: String,
        key: String,
        content: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        marker: Option<String>,
    },
    Revoke {
        key: String,
        /// Agent whose store holds the segment; defaults to the author's
        /// own store, then the workspace.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        holder: Option<String>,
    },
    Repeat {
        times: u32,
        step: Box<Step>,
    },
}

impl Step {
    pub fn op(&self) -> &'static str {
        match self {
            Step::Spawn { .. } => "spawn",
            Step::Remember { .. } => "remember",
            Step::Write { .. } => "write",
            Step::Read { .. } => "read",
            Step::Invoke { .. } => "invoke",
            Step::Commit { .. } => "commit",
            Step::Terminate { .. } => "terminate",
            Step::Resolve { .. } => "resolve",
            Step::Send { .. } => "send",
            Step::Inject { .. } => "inject",
            Step::Revoke { .. } => "revoke",
            Step::Repeat { .. } => "repeat",
        }
    }

    /// Replaces `{i}` in every string field.
    pub fn substitute(&self, i: u32) -> Step {
        let s = |v: &String| v.replace("{i}", &i.to_string());
        let o = |v: &Option<String>| v.as_ref().map(s);
        match self {
            Step::Spawn { agent } => Step::Spawn { agent: s(agent) },
            Step::Remember {
                key,
                content,
                label,
            } => Step::Remember {
                key: s(key),
                content: s(content),
                label: o(label),
            },
            Step::Write {
                key,
                content,
                label,
            } => Step::Write {
                key: s(key),
                content: s(content),
                label: o(label),
            },
            Step::Read { key } => Step::Read { key: s(key) },
            Step::Invoke { tool, target } => Step::Invoke {
                tool: s(tool),
                target: o(target),
            },
            Step::Commit {
                key,
                value,
                source,
                expect,
            } => Step::Commit {
                key: s(key),
                value: s(value),
                source: s(source),
                expect: o(expect),
            },
            Step::Terminate { target } => Step::Terminate { target: s(target) },
            Step::Resolve { target, approve } => Step::Resolve {
                target: o(target),
                approve: *approve,
            },
            Step::Send { to, text } => Step::Send {
                to: s(to),
                text: s(text),
            },
            Step::Inject {
                target,
                key,
                content,
                label,
                marker,
            } => Step::Inject {
                target: s(target),
                key: s(key),
                content: s(content),
                label: o(label),
                marker: o(marker),
            },
            Step::Revoke { key, holder } => Step::Revoke {
                key: s(key),
                holder: o(holder),
            },
            Step::Repeat { times, step } => Step::Repeat {
                times: *times,
                step: Box::new(step.substitute(i)),
            },
        }
    }

    /// Expands `repeat` into its iterations (1-based `{i}`).
    pub fn expand(&self) -> Vec<Step> {
        match self {
            Step::Repeat { times, step } => (1..=*times)
                .flat_map(|i| step.substitute(i).expand())
                .collect(),
            other => vec![other.clone()],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    /// Fixed interleaving prefix: one step per entry, by actor name.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub order: Vec<String>,
    /// Upper bound on events; guards against runaway scripts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedByMode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permissive: Option<Expected>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enforced: Option<Expected>,
}

impl ExpectedByMode {
    pub fn get(&self, mode: Mode) -> Option<&Expected> {
        match mode {
            Mode::Permissive => self.permissive.as_ref(),
            Mode::Enforced => self.enforced.as_ref(),
        }
    }
}

/// Expected observable outcome of one run. Violation and defense counts
/// are exact; kinds not listed are expected to be zero.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    #[serde(default)]
    pub violations: BTreeMap<String, usize>,
    #[serde(default)]
    pub defenses: BTreeMap<String, usize>,
    /// Exact workspace values.
    #[serde(default)]
    pub workspace: BTreeMap<String, String>,
    /// Workspace keys that must not exist.
    #[serde(default)]
    pub absent: Vec<String>,
    #[serde(default)]
    pub alive: Vec<String>,
    #[serde(default)]
    pub terminated: Vec<String>,
    #[serde(default)]
    pub executable: Vec<String>,
    #[serde(default)]
    pub not_executable: Vec<String>,
    #[serde(default)]
    pub executed: Vec<String>,
    #[serde(default)]
    pub persistence: Vec<String>,
    /// Workspace keys each agent must have read.
    #[serde(default)]
    pub reads: BTreeMap<String, Vec<String>>,
    /// Workspace keys each agent must never have read.
    #[serde(default)]
    pub no_reads: BTreeMap<String, Vec<String>>,
}

/// A problem found while loading or validating a scenario.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

impl Scenario {
    /// Parses and validates a TOML scenario.
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn name(&self) -> &str {
        &self.scenario.name
    }

    pub fn lattice(&self) -> Result<Lattice, ScenarioError> {
        match &self.scenario.lattice {
            None => Ok(Lattice::default()),
            Some(levels) => Lattice::new(levels.iter().cloned())
                .map_err(|e| invalid("scenario.lattice", e)),
        }
    }

    /// Tool universe after defaulting.
    pub fn tool_universe(&self) -> BTreeSet<String> {
        if self.tools.is_empty() {
            tools::ALL.iter().map(|t| t.to_string()).collect()
        } else {
            self.tools.iter().cloned().collect()
        }
    }

    /// The unique agent without a parent.
    pub fn root_name(&self) -> Option<&str> {
        let mut roots = self.agents.iter().filter(|(_, a)| a.parent.is_none());
        let (name, _) = roots.next()?;
        roots.next().is_none().then_some(name.as_str())
    }

    /// Checks that every reference resolves.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.scenario.name.trim().is_empty() {
            return Err(invalid("scenario.name", "must not be empty"));
        }
        let lattice = self.lattice()?;
        let universe = self.tool_universe();
        for (i, t) in self.tools.iter().enumerate() {
            if t.trim().is_empty() {
                return Err(invalid(format!("tools[{i}]"), "empty tool name"));
            }
        }
        if self.roles.is_empty() {
            return Err(invalid("roles", "at least one role is required"));
        }
        for (name, role) in &self.roles {
            lattice
                .label(&role.clearance)
                .map_err(|e| invalid(format!("roles.{name}.clearance"), e.to_string()))?;
            if let Some(t) = role.tools.iter().find(|t| !universe.contains(*t)) {
                return Err(invalid(
                    format!("roles.{name}.tools"),
                    format!("unknown tool `{t}`"),
                ));
            }
        }
        if self.agents.is_empty() {
            return Err(invalid("agents", "at least one agent is required"));
        }
        let roots: Vec<&String> = self
            .agents
            .iter()
            .filter(|(_, a)| a.parent.is_none())
            .map(|(n, _)| n)
            .collect();
        if roots.len() != 1 {
            return Err(invalid(
                "agents",
                format!("exactly one agent must have no parent, found {}", roots.len()),
            ));
        }
        for (name, a) in &self.agents {
            let f = |k: &str| format!("agents.{name}.{k}");
            if name == USER || name == ADVERSARY {
                return Err(invalid(format!("agents.{name}"), "reserved actor name"));
            }
            if !self.roles.contains_key(&a.role) {
                return Err(invalid(f("role"), format!("unknown role `{}`", a.role)));
            }
            if let Some(p) = &a.parent {
                if !self.agents.contains_key(p) {
                    return Err(invalid(f("parent"), format!("unknown agent `{p}`")));
                }
                if !a.memory.is_empty() {
                    return Err(invalid(f("memory"), "only the root may declare initial memory"));
                }
            }
            for (i, c) in a.capabilities.iter().enumerate() {
                c.parse::<Capability>()
                    .map_err(|e| invalid(format!("agents.{name}.capabilities[{i}]"), e))?;
            }
            if a.memory_mode == MemoryMode::InheritPartial && a.selector.is_none() {
                return Err(invalid(f("selector"), "required for inherit-partial"));
            }
            if a.interaction == Interaction::SessionBased && a.lifespan != Lifespan::Persistent {
                return Err(invalid(f("lifespan"), "session-based agents must be persistent"));
            }
            for (i, m) in a.memory.iter().enumerate() {
                self.check_label(&lattice, &m.label, &format!("agents.{name}.memory[{i}].label"))?;
            }
        }
        // Parent chains must reach the root without cycling.
        for name in self.agents.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = name;
            while let Some(p) = self.agents[cur].parent.as_ref() {
                if !seen.insert(cur) {
                    return Err(invalid(format!("agents.{name}.parent"), "parent chain contains a cycle"));
                }
                cur = p;
            }
        }
        for (i, w) in self.workspace.iter().enumerate() {
            self.check_label(&lattice, &w.label, &format!("workspace[{i}].label"))?;
            if self.workspace[..i].iter().any(|o| o.key == w.key) {
                return Err(invalid(format!("workspace[{i}].key"), format!("duplicate key `{}`", w.key)));
            }
        }
        let mut spawned: BTreeMap<&str, usize> = BTreeMap::new();
        for (actor, steps) in &self.behaviors {
            if !self.is_actor(actor) {
                return Err(invalid(format!("behaviors.{actor}"), "unknown actor"));
            }
            for (i, step) in steps.iter().enumerate() {
                let field = format!("behaviors.{actor}[{i}]");
                self.check_step(actor, step, &field, &lattice, &universe, &mut spawned)?;
            }
        }
        for (name, a) in &self.agents {
            if a.parent.is_some() && spawned.get(name.as_str()).copied().unwrap_or(0) != 1 {
                return Err(invalid(
                    format!("agents.{name}"),
                    "must be spawned by exactly one spawn step of its parent",
                ));
            }
        }
        for (i, o) in self.schedule.order.iter().enumerate() {
            if !self.is_actor(o) {
                return Err(invalid(format!("schedule.order[{i}]"), format!("unknown actor `{o}`")));
            }
        }
        for mode in Mode::ALL {
            if let Some(e) = self.expected.get(mode) {
                self.check_expected(e, &format!("expected.{mode}"))?;
            }
        }
        Ok(())
    }

    fn is_actor(&self, name: &str) -> bool {
        name == USER || name == ADVERSARY || self.agents.contains_key(name)
    }

    fn check_label(
        &self,
        lattice: &Lattice,
        label: &Option<String>,
        field: &str,
    ) -> Result<(), ScenarioError> {
        if let Some(l) = label {
            lattice.label(l).map_err(|e| invalid(field, e.to_string()))?;
        }
        Ok(())
    }

    fn agent_ref(&self, name: &str, field: String) -> Result<(), ScenarioError> {
        if self.agents.contains_key(name) {
            Ok(())
        } else {
            Err(invalid(field, format!("unknown agent `{name}`")))
        }
    }

    fn check_step<'a>(
        &'a self,
        actor: &str,
        step: &'a Step,
        field: &str,
        lattice: &Lattice,
        universe: &BTreeSet<String>,
        spawned: &mut BTreeMap<&'a str, usize>,
    ) -> Result<(), ScenarioError> {
        let is_agent = self.agents.contains_key(actor);
        let agent_only = |op: &str| {
            if is_agent {
                Ok(())
            } else {
                Err(invalid(field, format!("`{op}` requires an agent actor, not `{actor}`")))
            }
        };
        match step {
            Step::Spawn { agent } => {
                agent_only("spawn")?;
                self.agent_ref(agent, format!("{field}.agent"))?;
                if self.agents[agent].parent.as_deref() != Some(actor) {
                    return Err(invalid(
                        format!("{field}.agent"),
                        format!("`{agent}` is not declared as a child of `{actor}`"),
                    ));
                }
                *spawned.entry(agent.as_str()).or_insert(0) += 1;
            }
            Step::Remember { label, .. } | Step::Write { label, .. } => {
                agent_only(step.op())?;
                self.check_label(lattice, label, &format!("{field}.label"))?;
            }
            Step::Read { .. } | Step::Commit { .. } => agent_only(step.op())?,
            Step::Invoke { tool, .. } => {
                agent_only("invoke")?;
                if !universe.contains(tool) {
                    return Err(invalid(format!("{field}.tool"), format!("unknown tool `{tool}`")));
                }
            }
            Step::Terminate { target } => {
                agent_only("terminate")?;
                self.agent_ref(target, format!("{field}.target"))?;
            }
            Step::Resolve { target, .. } => {
                agent_only("resolve")?;
                if let Some(t) = target {
                    self.agent_ref(t, format!("{field}.target"))?;
                }
            }
            Step::Send { to, .. } => {
                if actor == ADVERSARY {
                    return Err(invalid(field, "the adversary acts through `inject`"));
                }
                if to != USER {
                    self.agent_ref(to, format!("{field}.to"))?;
                } else if actor == USER {
                    return Err(invalid(format!("{field}.to"), "the user cannot message itself"));
                }
            }
            Step::Inject { target, label, .. } => {
                if actor != ADVERSARY {
                    return Err(invalid(field, "`inject` is performed by the adversary"));
                }
                self.agent_ref(target, format!("{field}.target"))?;
                self.check_label(lattice, label, &format!("{field}.label"))?;
            }
            Step::Revoke { holder, .. } => {
                agent_only("revoke")?;
                if let Some(h) = holder {
                    self.agent_ref(h, format!("{field}.holder"))?;
                }
            }
            Step::Repeat { times, step: inner } => {
                if *times == 0 {
                    return Err(invalid(format!("{field}.times"), "must be positive"));
                }
                if matches!(**inner, Step::Spawn { .. }) {
                    return Err(invalid(format!("{field}.step"), "spawn cannot be repeated"));
                }
                self.check_step(actor, inner, &format!("{field}.step"), lattice, universe, spawned)?;
            }
        }
        Ok(())
    }

    fn check_expected(&self, e: &Expected, field: &str) -> Result<(), ScenarioError> {
        for k in e.violations.keys() {
            k.parse::<ViolationKind>()
                .map_err(|m| invalid(format!("{field}.violations"), m))?;
        }
        for k in e.defenses.keys() {
            k.parse::<DefenseKind>()
                .map_err(|m| invalid(format!("{field}.defenses"), m))?;
        }
        for (k, names) in [("alive", &e.alive), ("terminated", &e.terminated)] {
            for n in names {
                self.agent_ref(n, format!("{field}.{k}"))?;
            }
        }
        for (k, map) in [("reads", &e.reads), ("no_reads", &e.no_reads)] {
            for n in map.keys() {
                self.agent_ref(n, format!("{field}.{k}"))?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Spawn { agent } => write!(f, "spawn {agent}"),
            Step::Remember { key, .. } => write!(f, "remember {key}"),
            Step::Write { key, .. } => write!(f, "write {key}"),
            Step::Read { key } => write!(f, "read {key}"),
            Step::Invoke { tool, target } => match target {
                Some(t) => write!(f, "invoke {tool} {t}"),
                None => write!(f, "invoke {tool}"),
            },
            Step::Commit { key, source, .. } => write!(f, "commit {key} from {source}"),
            Step::Terminate { target } => write!(f, "terminate {target}"),
            Step::Resolve { approve, .. } => {
                write!(f, "resolve {}", if *approve { "approve" } else { "reject" })
            }
            Step::Send { to, .. } => write!(f, "send to {to}"),
            Step::Inject { target, key, .. } => write!(f, "inject {key} into {target}"),
            Step::Revoke { key, .. } => write!(f, "revoke {key}"),
            Step::Repeat { times, step } => write!(f, "repeat {times}x {step}"),
        }
    }
}
