use thiserror::Error;

use crate::memory::SegId;
use crate::network::AgentId;
use crate::registry::ToolId;

/// Errors raised by kernel operations.
///
/// Policy denials in enforced mode are *not* errors: they are returned as
/// [`crate::registry::PolicyDecision`] values and recorded in the trace.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("agent {0} is not alive")]
    AgentNotAlive(AgentId),
    #[error("agent {0} does not hold the spawn capability")]
    CapabilityDenied(AgentId),
    #[error("agent {parent} cannot grant {what} it does not hold")]
    PrivilegeEscalation { parent: AgentId, what: String },
    #[error("invalid spawn spec: {0}")]
    InvalidSpec(String),
    #[error("agent {0} is already terminated")]
    AlreadyTerminated(AgentId),
    #[error("the root agent cannot be terminated")]
    RootTermination,
    #[error("agent {approver} is not the shared parent for request {request}")]
    NotAuthorizedApprover { approver: AgentId, request: u64 },
    #[error("unknown termination request {0}")]
    UnknownRequest(u64),

    #[error("selector references segment {0} that the parent does not hold")]
    BadSelector(SegId),
    #[error("unknown segment {0}")]
    UnknownSegment(SegId),
    #[error("unknown segment key `{0}`")]
    UnknownSegmentKey(String),
    #[error("duplicate segment {0} in one store")]
    DuplicateSegment(SegId),
    #[error("unknown sensitivity level `{0}`")]
    UnknownLevel(String),

    #[error("agent {0} is already registered")]
    AlreadyRegistered(AgentId),
    #[error("role `{0}` has no entry in the role-to-resource map")]
    UnknownRole(String),

    #[error("revision time {t} does not follow {last}")]
    NonMonotonicTime { last: u64, t: u64 },
    #[error("bad audit range {from}..={to}")]
    BadRange { from: u64, to: u64 },
    #[error("agent {author} may not revoke segment {seg}")]
    NotAuthorizedRevoker { author: AgentId, seg: SegId },

    #[error("tool `{tool}` failed: {reason}")]
    ToolFailure { tool: ToolId, reason: String },
    #[error("unknown tool `{0}`")]
    UnknownTool(ToolId),

    #[error("no spawned agent named `{0}`")]
    NotSpawned(String),
    #[error("agent {agent} has never observed segment {seg}")]
    Unobserved { agent: AgentId, seg: SegId },
    #[error("inconsistent trace event at t={t}: {reason}")]
    InconsistentEvent { t: u64, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
