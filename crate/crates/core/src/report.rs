//! Run reports. The text and JSON renderings come from the same [`Report`]
//! value.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::checker::{Severity, Violation, ViolationKind};
use crate::kernel::Kernel;
use crate::network::{AgentId, Capability};
use crate::registry::{tools, Action, Reason, ToolId};
use crate::trace::{
    CommitStatus, EventBody, IgnoreReason, Outcome, Principal, TerminationStatus, TraceEvent,
};
use crate::{Mode, Tick};

pub const REPORT_FORMAT: &str = "spawnguard-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefenseKind {
    /// The registry denied an action before execution.
    Denial,
    /// A sibling termination was held for the shared parent.
    Suspension,
    /// A commit was refused because its source was stale or revoked.
    StaleCommit,
    /// Projection or the declared mode kept a segment out of a child.
    ExcludedSegment,
    /// A trigger rule was inert because its segment was revoked.
    RevokedContext,
}

impl DefenseKind {
    pub const ALL: [DefenseKind; 5] = [
        DefenseKind::Denial,
        DefenseKind::Suspension,
        DefenseKind::StaleCommit,
        DefenseKind::ExcludedSegment,
        DefenseKind::RevokedContext,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DefenseKind::Denial => "denial",
            DefenseKind::Suspension => "suspension",
            DefenseKind::StaleCommit => "stale-commit",
            DefenseKind::ExcludedSegment => "excluded-segment",
            DefenseKind::RevokedContext => "revoked-context",
        }
    }
}

impl fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DefenseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        DefenseKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown defense kind `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defense {
    pub kind: DefenseKind,
    pub at: Tick,
    pub actor: Principal,
    pub detail: String,
}

/// Defense events recorded in a trace.
pub fn defenses(events: &[TraceEvent]) -> Vec<Defense> {
    let mut out = Vec::new();
    for e in events {
        let mut push = |kind, detail: String| {
            out.push(Defense {
                kind,
                at: e.t,
                actor: e.actor,
                detail,
            })
        };
        match &e.body {
            EventBody::Spawn {
                child, excluded, ..
            } => {
                for s in excluded {
                    push(DefenseKind::ExcludedSegment, format!("{s} withheld from {child}"));
                }
            }
            EventBody::Remember {
                outcome: Outcome::Denied { reason },
                ..
            } => push(DefenseKind::Denial, format!("access-memory: {}", reason.code())),
            EventBody::Write {
                key,
                outcome: Outcome::Denied { reason },
                ..
            }
            | EventBody::Read {
                key,
                outcome: Outcome::Denied { reason },
                ..
            } => push(DefenseKind::Denial, format!("{} {key}: {}", e.body.kind(), reason.code())),
            EventBody::Invoke {
                tool,
                outcome: Outcome::Denied { reason },
                ..
            } => push(DefenseKind::Denial, format!("{tool}: {}", reason.code())),
            EventBody::Message {
                to,
                outcome: Outcome::Denied { reason },
                ..
            } => push(DefenseKind::Denial, format!("message to {to}: {}", reason.code())),
            EventBody::Terminate {
                target, outcome, ..
            } => match outcome {
                TerminationStatus::Denied { reason } => {
                    push(DefenseKind::Denial, format!("kill({target}): {}", reason.code()))
                }
                TerminationStatus::Suspended { request, parent } => push(
                    DefenseKind::Suspension,
                    format!("kill({target}) held as request {request} for {parent}"),
                ),
                TerminationStatus::Executed { .. } => {}
            },
            EventBody::Commit {
                key,
                validity,
                outcome,
                ..
            } => match outcome {
                CommitStatus::Blocked => push(
                    DefenseKind::StaleCommit,
                    format!("{key} refused: source {validity}"),
                ),
                CommitStatus::Denied { reason } => {
                    push(DefenseKind::Denial, format!("commit {key}: {}", reason.code()))
                }
                CommitStatus::Committed { .. } => {}
            },
            EventBody::Ignored {
                reason: IgnoreReason::RevokedRule,
                seg_id,
                ..
            } => push(
                DefenseKind::RevokedContext,
                match seg_id {
                    Some(s) => format!("rule {s} is revoked"),
                    None => "revoked rule".into(),
                },
            ),
            _ => {}
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionVerdict {
    Permit,
    /// Permissive mode executed an action the registry would deny.
    WouldDeny,
    Deny,
    Suspend,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub at: Tick,
    pub agent: AgentId,
    pub action: Action,
    pub verdict: DecisionVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<Reason>,
}

fn from_outcome(o: &Outcome) -> (DecisionVerdict, Option<Reason>) {
    match o {
        Outcome::Executed { would_deny: None } => (DecisionVerdict::Permit, None),
        Outcome::Executed {
            would_deny: Some(r),
        } => (DecisionVerdict::WouldDeny, Some(*r)),
        Outcome::Denied { reason } => (DecisionVerdict::Deny, Some(*reason)),
    }
}

/// The decision log: one record per mediated action.
pub fn decisions(events: &[TraceEvent]) -> Vec<DecisionRecord> {
    let tool = |t: &str| Action::Tool(ToolId::new(t));
    let mut out = Vec::new();
    for e in events {
        let (agent, action, (verdict, reason)) = match (&e.body, e.actor) {
            (EventBody::Remember { outcome, .. }, Principal::Agent(a)) => (
                a,
                Action::Structural(Capability::AccessMemory),
                from_outcome(outcome),
            ),
            (EventBody::Write { outcome, .. }, Principal::Agent(a)) => {
                (a, tool(tools::WRITE_SEGMENT), from_outcome(outcome))
            }
            (EventBody::Read { outcome, .. }, Principal::Agent(a)) => {
                (a, tool(tools::READ_SEGMENT), from_outcome(outcome))
            }
            (EventBody::Invoke { tool: t, outcome, .. }, Principal::Agent(a)) => {
                (a, Action::Tool(t.clone()), from_outcome(outcome))
            }
            (EventBody::Message { to, outcome, .. }, from) => {
                let (a, cap) = match (from, to) {
                    (Principal::Agent(a), Principal::Agent(_)) => (a, Capability::Communicate),
                    (Principal::Agent(a), _) => (a, Capability::UserInteract),
                    (_, Principal::Agent(b)) => (*b, Capability::UserInteract),
                    _ => continue,
                };
                (a, Action::Structural(cap), from_outcome(outcome))
            }
            (EventBody::Terminate { target, outcome, .. }, Principal::Agent(a)) => {
                let v = match outcome {
                    TerminationStatus::Executed { would_deny: None } => (DecisionVerdict::Permit, None),
                    TerminationStatus::Executed {
                        would_deny: Some(r),
                    } => (DecisionVerdict::WouldDeny, Some(*r)),
                    TerminationStatus::Denied { reason } => (DecisionVerdict::Deny, Some(*reason)),
                    TerminationStatus::Suspended { .. } => {
                        (DecisionVerdict::Suspend, Some(Reason::KillSibling))
                    }
                };
                (a, Action::Structural(Capability::Kill(*target)), v)
            }
            (EventBody::Commit { outcome, .. }, Principal::Agent(a)) => {
                let v = match outcome {
                    CommitStatus::Committed {
                        would_deny: None, ..
                    } => (DecisionVerdict::Permit, None),
                    CommitStatus::Committed {
                        would_deny: Some(r),
                        ..
                    } => (DecisionVerdict::WouldDeny, Some(*r)),
                    // The registry permitted the write; the revision log refused it.
                    CommitStatus::Blocked => (DecisionVerdict::Permit, None),
                    CommitStatus::Denied { reason } => (DecisionVerdict::Deny, Some(*reason)),
                };
                (a, tool(tools::WRITE_SEGMENT), v)
            }
            _ => continue,
        };
        out.push(DecisionRecord {
            at: e.t,
            agent,
            action,
            verdict,
            reason,
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub id: AgentId,
    pub name: String,
    pub role: String,
    pub alive: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalState {
    pub clock: Tick,
    pub agents: Vec<AgentSummary>,
    pub workspace: BTreeMap<String, String>,
    pub executable: Vec<String>,
    pub executed: Vec<String>,
    pub persistence: Vec<String>,
    pub pending_requests: Vec<u64>,
}

impl FinalState {
    pub fn of(kernel: &Kernel) -> Self {
        let ws = kernel.workspace();
        Self {
            clock: kernel.clock(),
            agents: kernel
                .state()
                .agents()
                .map(|a| AgentSummary {
                    id: a.id,
                    name: a.name.clone(),
                    role: a.role.name.clone(),
                    alive: a.alive,
                })
                .collect(),
            workspace: ws.values(),
            executable: ws.executable().iter().cloned().collect(),
            executed: ws.executed().to_vec(),
            persistence: ws.persistence().to_vec(),
            pending_requests: kernel.pending().keys().copied().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub matched: bool,
    pub mismatches: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u32,
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub trace_hash: String,
    pub events: usize,
    pub violations: Vec<Violation>,
    pub violation_counts: BTreeMap<ViolationKind, usize>,
    pub defenses: Vec<Defense>,
    pub defense_counts: BTreeMap<DefenseKind, usize>,
    pub decisions: Vec<DecisionRecord>,
    pub final_state: FinalState,
    /// Absent when the scenario declares no expectation for this mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expectation: Option<ExpectationResult>,
}

impl Report {
    pub fn build(
        scenario: &str,
        seed: u64,
        kernel: &Kernel,
        trace_hash: String,
        violations: Vec<Violation>,
        expectation: Option<ExpectationResult>,
    ) -> Self {
        let events = kernel.events();
        let defenses = defenses(events);
        let mut defense_counts = BTreeMap::new();
        for d in &defenses {
            *defense_counts.entry(d.kind).or_insert(0) += 1;
        }
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            scenario: scenario.to_owned(),
            mode: kernel.mode(),
            seed,
            trace_hash,
            events: events.len(),
            violation_counts: crate::checker::counts(&violations),
            violations,
            defenses,
            defense_counts,
            decisions: decisions(events),
            final_state: FinalState::of(kernel),
            expectation,
        }
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violation_counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn defense_count(&self, kind: DefenseKind) -> usize {
        self.defense_counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn matched(&self) -> Option<bool> {
        self.expectation.as_ref().map(|e| e.matched)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} v{}", self.format, self.version);
        let _ = writeln!(
            s,
            "scenario {}  mode {}  seed {}",
            self.scenario, self.mode, self.seed
        );
        let _ = writeln!(s, "events {}  trace {}", self.events, self.trace_hash);
        let _ = writeln!(s, "\nviolations ({})", self.violations.len());
        for v in &self.violations {
            let sev = match v.severity {
                Severity::Security => "security",
                Severity::Informational => "info",
            };
            let _ = writeln!(s, "  [{sev}] {v}");
        }
        let _ = writeln!(s, "\ndefenses ({})", self.defenses.len());
        for d in &self.defenses {
            let _ = writeln!(s, "  t={} {} by {}: {}", d.at, d.kind, d.actor, d.detail);
        }
        let _ = writeln!(s, "\nagents");
        for a in &self.final_state.agents {
            let state = if a.alive { "alive" } else { "terminated" };
            let _ = writeln!(s, "  {} {} ({}) {state}", a.id, a.name, a.role);
        }
        let _ = writeln!(s, "\nworkspace");
        for (k, v) in &self.final_state.workspace {
            let _ = writeln!(s, "  {k} = {v:?}");
        }
        if !self.final_state.executable.is_empty() {
            let _ = writeln!(s, "  executable: {}", self.final_state.executable.join(", "));
        }
        if !self.final_state.executed.is_empty() {
            let _ = writeln!(s, "  executed: {}", self.final_state.executed.join(", "));
        }
        if !self.final_state.persistence.is_empty() {
            let _ = writeln!(s, "  persistence: {}", self.final_state.persistence.join(", "));
        }
        match &self.expectation {
            None => {
                let _ = writeln!(s, "\nexpectation: none declared");
            }
            Some(e) if e.matched => {
                let _ = writeln!(s, "\nexpectation: matched");
            }
            Some(e) => {
                let _ = writeln!(s, "\nexpectation: MISMATCH");
                for m in &e.mismatches {
                    let _ = writeln!(s, "  {m}");
                }
            }
        }
        s
    }
}
