//! Post-hoc invariant checks over a final state and its trace.
//!
//! All checks are read-only and deterministic: output is sorted by
//! `(at, kind, actor)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::memory::{MemoryMode, SegId};
use crate::network::{AgentId, NetworkState};
use crate::registry::{tools, RoleResourceMap, ToolId};
use crate::trace::{CommitStatus, EventBody, SegmentDigest, TerminationStatus, TraceEvent};
use crate::workspace::Workspace;
use crate::Tick;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    UnauthorizedTermination,
    ImproperInheritance,
    NoAccessControl,
    MemoryDivergence,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 4] = [
        ViolationKind::UnauthorizedTermination,
        ViolationKind::ImproperInheritance,
        ViolationKind::NoAccessControl,
        ViolationKind::MemoryDivergence,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationKind::UnauthorizedTermination => "unauthorized-termination",
            ViolationKind::ImproperInheritance => "improper-inheritance",
            ViolationKind::NoAccessControl => "no-access-control",
            ViolationKind::MemoryDivergence => "memory-divergence",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ViolationKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ViolationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown violation kind `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Informational,
    Security,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ViolationDetail {
    Termination {
        target: AgentId,
    },
    Inheritance {
        parent: AgentId,
        declared_mode: MemoryMode,
        /// Inherited segments outside the declared mode's bound.
        excess: Vec<SegId>,
    },
    Tool {
        tool: ToolId,
        role: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
    },
    Divergence {
        seg_id: SegId,
        key: String,
        observed: String,
        current: String,
        observed_at: Tick,
        /// The agent committed a value justified by this observation.
        stale_commit: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub actor: AgentId,
    pub at: Tick,
    pub severity: Severity,
    pub detail: ViolationDetail,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} {} by {}: ", self.at, self.kind, self.actor)?;
        match &self.detail {
            ViolationDetail::Termination { target } => write!(f, "terminated {target}"),
            ViolationDetail::Inheritance {
                parent,
                declared_mode,
                excess,
            } => {
                let ids: Vec<String> = excess.iter().map(ToString::to_string).collect();
                write!(
                    f,
                    "declared {declared_mode} from {parent} but received [{}]",
                    ids.join(", ")
                )
            }
            ViolationDetail::Tool { tool, role, target } => {
                write!(f, "invoked {tool}")?;
                if let Some(t) = target {
                    write!(f, " on {t}")?;
                }
                write!(f, " outside role `{role}`")
            }
            ViolationDetail::Divergence {
                key,
                observed,
                current,
                stale_commit,
                ..
            } => {
                write!(f, "{key}: observed {observed:?}, current {current:?}")?;
                if *stale_commit {
                    write!(f, " (committed against stale view)")?;
                }
                Ok(())
            }
        }
    }
}

/// What a spawn event says about the child's initialization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpawnRecord {
    pub child: AgentId,
    pub parent: AgentId,
    pub declared_mode: MemoryMode,
    pub selector: Option<BTreeSet<SegId>>,
    pub parent_memory: Vec<SegmentDigest>,
    pub inherited: Vec<SegmentDigest>,
    pub at: Tick,
}

pub fn spawn_records(events: &[TraceEvent]) -> Vec<SpawnRecord> {
    events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::Spawn {
                child,
                declared_mode,
                selector,
                parent_memory,
                inherited,
                ..
            } => Some(SpawnRecord {
                child: *child,
                parent: e.actor.agent()?,
                declared_mode: *declared_mode,
                selector: selector.clone(),
                parent_memory: parent_memory.clone(),
                inherited: inherited
                    .iter()
                    .map(|s| SegmentDigest {
                        id: s.id,
                        digest: s.content_digest(),
                    })
                    .collect(),
                at: e.t,
            }),
            _ => None,
        })
        .collect()
}

/// Every executed termination must satisfy
/// `kill ∈ κ(actor) ∧ ((actor, target) ∈ E ∨ actor = root)`.
/// Approved suspended requests are judged with the approving parent as actor.
pub fn check_termination_scope(events: &[TraceEvent], state: &NetworkState) -> Vec<Violation> {
    let mut out = Vec::new();
    for e in events {
        let (actor, target) = match (&e.body, e.actor.agent()) {
            (
                EventBody::Terminate {
                    target,
                    outcome: TerminationStatus::Executed { .. },
                    ..
                },
                Some(actor),
            ) => (actor, *target),
            (
                EventBody::Resolve {
                    target,
                    executed: true,
                    ..
                },
                Some(actor),
            ) => (actor, *target),
            _ => continue,
        };
        if !state.termination_authorized(actor, target) {
            out.push(Violation {
                kind: ViolationKind::UnauthorizedTermination,
                actor,
                at: e.t,
                severity: Severity::Security,
                detail: ViolationDetail::Termination { target },
            });
        }
    }
    out
}

/// A child's initial store must stay within its declared mode: everything
/// for inherit-full, `σ` for inherit-partial, nothing for agent-agnostic.
/// Segments are compared by id and content hash.
pub fn check_memory_isolation(records: &[SpawnRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    for r in records {
        let parent: BTreeMap<SegId, &str> = r
            .parent_memory
            .iter()
            .map(|d| (d.id, d.digest.as_str()))
            .collect();
        let allowed = |id: &SegId| match r.declared_mode {
            MemoryMode::InheritFull => true,
            MemoryMode::InheritPartial => r.selector.as_ref().is_some_and(|s| s.contains(id)),
            MemoryMode::AgentAgnostic => false,
        };
        let excess: Vec<SegId> = r
            .inherited
            .iter()
            .filter(|d| !allowed(&d.id) || parent.get(&d.id) != Some(&d.digest.as_str()))
            .map(|d| d.id)
            .collect();
        if !excess.is_empty() {
            out.push(Violation {
                kind: ViolationKind::ImproperInheritance,
                actor: r.child,
                at: r.at,
                severity: Severity::Security,
                detail: ViolationDetail::Inheritance {
                    parent: r.parent,
                    declared_mode: r.declared_mode,
                    excess,
                },
            });
        }
    }
    out
}

/// Tool invocations an event executed, with their target.
pub fn executed_tools(body: &EventBody) -> Option<(ToolId, Option<String>)> {
    match body {
        EventBody::Invoke {
            tool,
            target,
            outcome,
            ..
        } if outcome.is_executed() => Some((tool.clone(), target.clone())),
        EventBody::Read { key, outcome, .. } if outcome.is_executed() => {
            Some((ToolId::new(tools::READ_SEGMENT), Some(key.clone())))
        }
        EventBody::Write { key, outcome, .. } if outcome.is_executed() => {
            Some((ToolId::new(tools::WRITE_SEGMENT), Some(key.clone())))
        }
        EventBody::Commit {
            key,
            outcome: CommitStatus::Committed { .. },
            ..
        } => Some((ToolId::new(tools::WRITE_SEGMENT), Some(key.clone()))),
        _ => None,
    }
}

/// Every executed tool invocation must lie in `τ(ρ(agent))`.
pub fn check_access_control(
    events: &[TraceEvent],
    map: &RoleResourceMap,
    state: &NetworkState,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for e in events {
        let (Some(agent), Some((tool, target))) = (e.actor.agent(), executed_tools(&e.body)) else {
            continue;
        };
        let role = state
            .agent(agent)
            .map(|a| a.role.name.clone())
            .unwrap_or_default();
        let granted = map.resources(&role).is_some_and(|r| r.contains(&tool));
        if !granted {
            out.push(Violation {
                kind: ViolationKind::NoAccessControl,
                actor: agent,
                at: e.t,
                severity: Severity::Security,
                detail: ViolationDetail::Tool { tool, role, target },
            });
        }
    }
    out
}

/// Reports every live agent holding an observation that no longer matches
/// the current content: workspace segments against the workspace, inherited
/// segments against the parent's store. Severity is security when the agent
/// committed a value justified by a stale or revoked observation.
pub fn check_divergence(state: &NetworkState, workspace: &Workspace, at: Tick) -> Vec<Violation> {
    let mut out = Vec::new();
    for a in state.agents().filter(|a| a.alive) {
        for (seg, view) in &a.views {
            let current = if let Some(s) = workspace.store().get(*seg) {
                s
            } else if a.inherited.get(*seg).is_some() {
                let Some(s) = a
                    .parent
                    .and_then(|p| state.agent(p).ok())
                    .and_then(|p| p.memory.get(*seg))
                else {
                    continue;
                };
                s
            } else {
                continue;
            };
            if current.content == view.content {
                continue;
            }
            let stale_commit = workspace
                .commits()
                .iter()
                .any(|c| c.agent == a.id && c.source == *seg && !c.validity.is_valid());
            out.push(Violation {
                kind: ViolationKind::MemoryDivergence,
                actor: a.id,
                at,
                severity: if stale_commit {
                    Severity::Security
                } else {
                    Severity::Informational
                },
                detail: ViolationDetail::Divergence {
                    seg_id: *seg,
                    key: current.key.clone(),
                    observed: view.content.clone(),
                    current: current.content.clone(),
                    observed_at: view.at,
                    stale_commit,
                },
            });
        }
    }
    out
}

/// Runs all four checks and sorts the result.
pub fn check_all(
    events: &[TraceEvent],
    state: &NetworkState,
    workspace: &Workspace,
    map: &RoleResourceMap,
) -> Vec<Violation> {
    let mut out = check_termination_scope(events, state);
    out.extend(check_memory_isolation(&spawn_records(events)));
    out.extend(check_access_control(events, map, state));
    out.extend(check_divergence(state, workspace, state.clock()));
    out.sort_by_key(|v| (v.at, v.kind, v.actor));
    out
}

pub fn counts(violations: &[Violation]) -> BTreeMap<ViolationKind, usize> {
    let mut m = BTreeMap::new();
    for v in violations {
        *m.entry(v.kind).or_insert(0) += 1;
    }
    m
}
