//! Execution traces: the event vocabulary, the line-delimited JSON file
//! format and its content hash.
//!
//! A trace file is one header line, one line per event, and a footer line
//! carrying the event count, the SHA-256 of every preceding line (each
//! including its trailing newline) and the checker verdicts.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checker::Violation;
use crate::memory::{MemoryMode, MemorySegment, SegId};
use crate::network::{AgentId, Capability, Interaction, Lifespan, Role};
use crate::registry::{Reason, RegistryEntry, ToolId};
use crate::revision::Validity;
use crate::workspace::ToolEffect;
use crate::{KernelConfig, Mode, Tick};

pub const TRACE_FORMAT: &str = "spawnguard-trace";
pub const TRACE_VERSION: u32 = 1;

/// Who performed an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Principal {
    Agent(AgentId),
    User,
    Adversary,
}

impl Principal {
    pub fn agent(&self) -> Option<AgentId> {
        match self {
            Principal::Agent(a) => Some(*a),
            _ => None,
        }
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Principal::Agent(a) => a.fmt(f),
            Principal::User => f.write_str("user"),
            Principal::Adversary => f.write_str("adversary"),
        }
    }
}

impl FromStr for Principal {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "user" => Ok(Principal::User),
            "adversary" => Ok(Principal::Adversary),
            other => other.parse().map(Principal::Agent),
        }
    }
}

impl TryFrom<String> for Principal {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Principal> for String {
    fn from(p: Principal) -> Self {
        p.to_string()
    }
}

impl From<AgentId> for Principal {
    fn from(a: AgentId) -> Self {
        Principal::Agent(a)
    }
}

/// Result of a mediated action.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Outcome {
    Executed {
        /// Permissive mode only: the reason the registry would have denied.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        would_deny: Option<Reason>,
    },
    Denied {
        reason: Reason,
    },
}

impl Outcome {
    pub fn executed() -> Self {
        Outcome::Executed { would_deny: None }
    }

    pub fn is_executed(&self) -> bool {
        matches!(self, Outcome::Executed { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TerminationStatus {
    Executed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        would_deny: Option<Reason>,
    },
    Denied {
        reason: Reason,
    },
    Suspended {
        request: u64,
        parent: AgentId,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CommitStatus {
    Committed {
        seg_id: SegId,
        created: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        would_deny: Option<Reason>,
    },
    /// The source segment was not valid at commit time.
    Blocked,
    Denied {
        reason: Reason,
    },
}

/// Why a step produced no action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IgnoreReason {
    /// A message matched no trigger rule in the recipient's memory.
    NoMatchingRule,
    /// A trigger rule matched but its segment has been revoked.
    RevokedRule,
    /// Revalidation after a blocked commit found the source changed.
    SourceChanged,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentDigest {
    pub id: SegId,
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventBody {
    Genesis {
        agent: AgentId,
        name: String,
        role: Role,
        capabilities: BTreeSet<Capability>,
        lifespan: Lifespan,
        interaction: Interaction,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        registration: Option<RegistryEntry>,
    },
    /// Setup-time segment: into an agent's store, or the workspace when
    /// `owner` is absent.
    Seed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        owner: Option<AgentId>,
        segment: MemorySegment,
    },
    Spawn {
        child: AgentId,
        name: String,
        role: Role,
        capabilities: BTreeSet<Capability>,
        declared_mode: MemoryMode,
        effective_mode: MemoryMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        selector: Option<BTreeSet<SegId>>,
        lifespan: Lifespan,
        interaction: Interaction,
        parent_memory: Vec<SegmentDigest>,
        inherited: Vec<MemorySegment>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        excluded: Vec<SegId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        registration: Option<RegistryEntry>,
    },
    Remember {
        segment: MemorySegment,
        created: bool,
        outcome: Outcome,
    },
    Inject {
        target: AgentId,
        segment: MemorySegment,
    },
    Write {
        seg_id: SegId,
        key: String,
        content: String,
        created: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        segment: Option<MemorySegment>,
        outcome: Outcome,
    },
    Read {
        seg_id: SegId,
        key: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        content: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        via_rule: Option<SegId>,
        outcome: Outcome,
    },
    Invoke {
        tool: ToolId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        effect: Option<ToolEffect>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        via_rule: Option<SegId>,
        outcome: Outcome,
    },
    Terminate {
        target: AgentId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        via_rule: Option<SegId>,
        outcome: TerminationStatus,
    },
    Resolve {
        request: u64,
        requester: AgentId,
        target: AgentId,
        approve: bool,
        executed: bool,
    },
    Revoke {
        seg_id: SegId,
    },
    Commit {
        key: String,
        value: String,
        source: SegId,
        observed_at: Tick,
        validity: Validity,
        outcome: CommitStatus,
    },
    Message {
        to: Principal,
        text: String,
        outcome: Outcome,
    },
    Ignored {
        text: String,
        reason: IgnoreReason,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seg_id: Option<SegId>,
    },
    Rejected {
        action: String,
        error: String,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Genesis { .. } => "genesis",
            EventBody::Seed { .. } => "seed",
            EventBody::Spawn { .. } => "spawn",
            EventBody::Remember { .. } => "remember",
            EventBody::Inject { .. } => "inject",
            EventBody::Write { .. } => "write",
            EventBody::Read { .. } => "read",
            EventBody::Invoke { .. } => "invoke",
            EventBody::Terminate { .. } => "terminate",
            EventBody::Resolve { .. } => "resolve",
            EventBody::Revoke { .. } => "revoke",
            EventBody::Commit { .. } => "commit",
            EventBody::Message { .. } => "message",
            EventBody::Ignored { .. } => "ignored",
            EventBody::Rejected { .. } => "rejected",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: Tick,
    pub actor: Principal,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub config: KernelConfig,
}

impl TraceHeader {
    pub fn new(scenario: impl Into<String>, seed: u64, config: KernelConfig) -> Self {
        Self {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            scenario: scenario.into(),
            mode: config.mode,
            seed,
            config,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub events: usize,
    pub hash: String,
    pub verdicts: Vec<Violation>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Framing {
    Header(TraceHeader),
    Footer(TraceFooter),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported trace format `{format}` version {version}")]
    Unsupported { format: String, version: u32 },
    #[error("trace has no footer")]
    MissingFooter,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    fn body_lines(&self) -> Vec<String> {
        let mut lines = Vec::with_capacity(self.events.len() + 1);
        lines.push(serde_json::to_string(&Framing::Header(self.header.clone())).expect("header"));
        for e in &self.events {
            lines.push(serde_json::to_string(e).expect("event serializes"));
        }
        lines
    }

    /// SHA-256 over the header and event lines, newline-terminated.
    pub fn hash(&self) -> String {
        hash_lines(self.body_lines().iter().map(String::as_str))
    }

    /// Serializes the full file, footer included.
    pub fn to_jsonl(&self, verdicts: &[Violation]) -> String {
        let lines = self.body_lines();
        let hash = hash_lines(lines.iter().map(String::as_str));
        let footer = Framing::Footer(TraceFooter {
            events: self.events.len(),
            hash,
            verdicts: verdicts.to_vec(),
        });
        let mut out = String::new();
        for l in &lines {
            out.push_str(l);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&footer).expect("footer"));
        out.push('\n');
        out
    }
}

pub fn hash_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// A parsed trace file, with the hash recomputed over the raw bytes read.
#[derive(Clone, Debug)]
pub struct ParsedTrace {
    pub trace: Trace,
    pub footer: TraceFooter,
    pub computed_hash: String,
}

impl ParsedTrace {
    pub fn hash_matches(&self) -> bool {
        self.computed_hash == self.footer.hash && self.footer.events == self.trace.events.len()
    }
}

pub fn parse_jsonl(text: &str) -> Result<ParsedTrace, TraceError> {
    // keep 1-based source line numbers for diagnostics
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    let (first, rest) = lines.split_first().ok_or(TraceError::Empty)?;
    let (last, middle) = rest.split_last().ok_or(TraceError::MissingFooter)?;
    let header = match serde_json::from_str::<Framing>(first.1) {
        Ok(Framing::Header(h)) => h,
        Ok(Framing::Footer(_)) => {
            return Err(TraceError::Parse {
                line: first.0,
                message: "expected header".into(),
            })
        }
        Err(e) => {
            return Err(TraceError::Parse {
                line: first.0,
                message: e.to_string(),
            })
        }
    };
    if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
        return Err(TraceError::Unsupported {
            format: header.format,
            version: header.version,
        });
    }
    let footer = match serde_json::from_str::<Framing>(last.1) {
        Ok(Framing::Footer(f)) => f,
        _ => return Err(TraceError::MissingFooter),
    };
    let mut events = Vec::with_capacity(middle.len());
    for &(line, l) in middle {
        let e = serde_json::from_str::<TraceEvent>(l).map_err(|e| TraceError::Parse {
            line,
            message: e.to_string(),
        })?;
        events.push(e);
    }
    let computed_hash = hash_lines(std::iter::once(first.1).chain(middle.iter().map(|(_, l)| *l)));
    Ok(ParsedTrace {
        trace: Trace { header, events },
        footer,
        computed_hash,
    })
}
