//! Security kernel and deterministic simulator for role-based multi-agent
//! networks.
//!
//! Agents form a rooted tree. Each agent carries capabilities, a labeled
//! memory store and a lifecycle. The [`kernel::Kernel`] mediates every
//! spawn, termination, memory access and tool call, either permissively
//! (reproducing an unguarded orchestration framework) or enforced through a
//! capability registry, label projection at spawn and a revision log.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod checker;
pub mod engine;
pub mod error;
pub mod kernel;
pub mod label;
pub mod memory;
pub mod network;
pub mod registry;
pub mod replay;
pub mod report;
pub mod revision;
pub mod trace;
pub mod workspace;

pub use checker::{Severity, Violation, ViolationDetail, ViolationKind};
pub use error::{Error, Result};
pub use kernel::{
    InterceptOutcome, Invocation, InvocationResult, Kernel, KernelConfig, PendingTermination,
    ResolveOutcome, RootSpec, SiblingPolicy, TerminationOutcome,
};
pub use label::{Lattice, SensitivityLabel};
pub use memory::{
    contamination_reach, inherit, project, snapshot, MemoryMode, MemorySegment, MemorySnapshot,
    MemoryStore, PayloadMarker, SegId,
};
pub use network::{
    AgentId, AgentRecord, Capability, Interaction, Lifespan, NetworkState, Role, SpawnSpec,
    StructuralIssue, ValidationReport,
};
pub use report::{DefenseKind, Report};
pub use registry::{
    Action, PolicyDecision, Reason, Registry, RegistryEntry, RoleResourceMap, ToolId, Verdict,
};
pub use revision::{RevisionEvent, RevisionLog, RevisionOp, Validity};
pub use trace::{EventBody, Principal, Trace, TraceEvent};
pub use workspace::{ToolEffect, Workspace};

/// Logical time. Every kernel event advances it by one.
pub type Tick = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Permissive,
    Enforced,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Permissive, Mode::Enforced];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Permissive => "permissive",
            Mode::Enforced => "enforced",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "permissive" => Ok(Mode::Permissive),
            "enforced" => Ok(Mode::Enforced),
            other => Err(format!("unknown mode `{other}` (expected permissive or enforced)")),
        }
    }
}
