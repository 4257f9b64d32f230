//! The single-writer kernel.
//!
//! Every operation validates its preconditions, describes the mutation as a
//! [`TraceEvent`] and hands it to [`Kernel::apply`]. `apply` is the only code
//! path that changes state, so folding it over a recorded trace rebuilds the
//! exact state of the original run.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{Lattice, SensitivityLabel};
use crate::memory::{
    inherit, snapshot, MemoryMode, MemorySegment, MemoryStore, PayloadMarker, SegId,
};
use crate::network::{
    AgentId, AgentRecord, Capability, Interaction, Lifespan, NetworkState, Role, SegmentView,
    SpawnSpec,
};
use crate::registry::{
    decide_entry, tools, Action, PolicyDecision, Reason, Registry, RegistryEntry,
    RoleResourceMap, ToolId,
};
use crate::revision::{RevisionEvent, RevisionLog, RevisionOp, Validity};
use crate::trace::{
    CommitStatus, EventBody, IgnoreReason, Outcome, Principal, SegmentDigest, TerminationStatus, Trace,
    TraceEvent, TraceHeader,
};
use crate::workspace::{CommitRecord, ToolEffect, Workspace};
use crate::{Mode, Tick};

/// What enforced mode does with a sibling kill.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiblingPolicy {
    /// Queue the request for the shared parent.
    #[default]
    Suspend,
    /// Deny outright.
    Deny,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub mode: Mode,
    pub lattice: Lattice,
    pub role_map: RoleResourceMap,
    /// The tool universe `T`.
    pub tools: BTreeSet<ToolId>,
    #[serde(default)]
    pub sibling_policy: SiblingPolicy,
}

impl KernelConfig {
    /// Default lattice, every standard tool, empty role map.
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            lattice: Lattice::default(),
            role_map: RoleResourceMap::new(),
            tools: tools::ALL.iter().map(|t| ToolId::new(*t)).collect(),
            sibling_policy: SiblingPolicy::Suspend,
        }
    }
}

/// Initial parameters of the root orchestrator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootSpec {
    pub name: String,
    pub role: Role,
    pub capabilities: BTreeSet<Capability>,
    pub lifespan: Lifespan,
    pub interaction: Interaction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingTermination {
    pub request: u64,
    pub requester: AgentId,
    pub target: AgentId,
    pub parent: AgentId,
    pub at: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InterceptOutcome<T> {
    Executed(T),
    Denied(PolicyDecision),
    Suspended(u64),
}

impl<T> InterceptOutcome<T> {
    pub fn is_executed(&self) -> bool {
        matches!(self, InterceptOutcome::Executed(_))
    }

    pub fn executed(self) -> Option<T> {
        match self {
            InterceptOutcome::Executed(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TerminationOutcome {
    Executed,
    Denied(PolicyDecision),
    SuspendedPendingParent(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResolveOutcome {
    Terminated,
    Rejected,
    /// Approved, but the target had already stopped.
    TargetGone,
}

/// An action routed through [`Kernel::intercept`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Invocation {
    Tool { tool: ToolId, target: Option<String> },
    Read(SegId),
    Write { key: String, content: String },
    Kill(AgentId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InvocationResult {
    Effect(ToolEffect),
    Content(String),
    Written(SegId),
    Terminated,
}

enum Gate {
    Pass(Option<Reason>),
    Deny(PolicyDecision),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Kernel {
    config: KernelConfig,
    net: NetworkState,
    registry: Registry,
    revisions: RevisionLog,
    workspace: Workspace,
    pending: BTreeMap<u64, PendingTermination>,
    seg_owner: BTreeMap<SegId, AgentId>,
    next_seg: u64,
    next_request: u64,
    events: Vec<TraceEvent>,
}

impl Kernel {
    /// Creates the root agent `a0` at `t = 0`.
    pub fn new(config: KernelConfig, root: RootSpec) -> Result<Self> {
        let agent = AgentId(0);
        if !config.lattice.contains(&root.role.clearance) {
            return Err(Error::UnknownLevel(root.role.clearance.name().to_owned()));
        }
        let registration = match config.mode {
            Mode::Enforced => Some(entry_for(
                &config.role_map,
                agent,
                root.capabilities.clone(),
                &root.role,
                0,
            )?),
            Mode::Permissive => None,
        };
        let event = TraceEvent {
            t: 0,
            actor: Principal::Agent(agent),
            body: EventBody::Genesis {
                agent,
                name: root.name,
                role: root.role,
                capabilities: root.capabilities,
                lifespan: root.lifespan,
                interaction: root.interaction,
                registration,
            },
        };
        Self::genesis(config, event)
    }

    /// Rebuilds a kernel by applying `events` in order.
    pub fn replay(config: KernelConfig, events: &[TraceEvent]) -> Result<Self> {
        let (first, rest) = events.split_first().ok_or(Error::InconsistentEvent {
            t: 0,
            reason: "empty trace".into(),
        })?;
        let mut kernel = Self::genesis(config, first.clone())?;
        for e in rest {
            kernel.apply(e.clone())?;
        }
        Ok(kernel)
    }

    fn genesis(config: KernelConfig, event: TraceEvent) -> Result<Self> {
        let EventBody::Genesis {
            agent,
            name,
            role,
            capabilities,
            lifespan,
            interaction,
            registration,
        } = &event.body
        else {
            return Err(inconsistent(event.t, "first event must be genesis"));
        };
        if event.t != 0 || event.actor != Principal::Agent(*agent) {
            return Err(inconsistent(event.t, "genesis must be at t=0 by the root"));
        }
        let memory = MemoryStore::new(Some(*agent));
        let record = AgentRecord {
            id: *agent,
            name: name.clone(),
            role: role.clone(),
            capabilities: capabilities.clone(),
            inherited: snapshot(&memory, 0),
            memory,
            lifespan: *lifespan,
            interaction: *interaction,
            alive: true,
            parent: None,
            declared_mode: None,
            spawned_at: 0,
            views: BTreeMap::new(),
        };
        let mut registry = Registry::new();
        if let Some(entry) = registration {
            registry.restore(entry.clone())?;
        }
        Ok(Self {
            config,
            net: NetworkState::with_root(record),
            registry,
            revisions: RevisionLog::new(),
            workspace: Workspace::new(),
            pending: BTreeMap::new(),
            seg_owner: BTreeMap::new(),
            next_seg: 0,
            next_request: 0,
            events: vec![event],
        })
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn state(&self) -> &NetworkState {
        &self.net
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn revisions(&self) -> &RevisionLog {
        &self.revisions
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn pending(&self) -> &BTreeMap<u64, PendingTermination> {
        &self.pending
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn clock(&self) -> Tick {
        self.net.clock()
    }

    pub fn root(&self) -> AgentId {
        self.net.root()
    }

    /// Whether `agent` is waiting on a suspended termination it requested.
    pub fn is_blocked(&self, agent: AgentId) -> bool {
        self.pending.values().any(|p| p.requester == agent)
    }

    /// Agent whose store a segment was created in (the writer, for
    /// workspace segments).
    pub fn segment_owner(&self, seg: SegId) -> Option<AgentId> {
        self.seg_owner.get(&seg).copied()
    }

    pub fn trace(&self, scenario: &str, seed: u64) -> Trace {
        Trace {
            header: TraceHeader::new(scenario, seed, self.config.clone()),
            events: self.events.clone(),
        }
    }

    /// `valid(seg, t0)` with `t0` the spawn time of `agent`.
    pub fn segment_validity(&self, agent: AgentId, seg: SegId) -> Result<Validity> {
        let a = self.net.agent(agent)?;
        Ok(self.revisions.valid(seg, a.spawned_at))
    }

    /// Finds a segment by key, first in the agent's own store, then in the
    /// workspace.
    pub fn resolve_key(&self, agent: AgentId, key: &str) -> Result<SegId> {
        let a = self.net.agent(agent)?;
        a.memory
            .get_by_key(key)
            .map(|s| s.id)
            .or_else(|| self.workspace.seg_id(key))
            .ok_or_else(|| Error::UnknownSegmentKey(key.to_owned()))
    }

    fn emit(&mut self, actor: Principal, body: EventBody) -> Result<Tick> {
        let t = self.net.clock() + 1;
        self.apply(TraceEvent { t, actor, body })?;
        Ok(t)
    }

    fn alloc_seg(&self) -> SegId {
        SegId(self.next_seg)
    }

    fn note_seg(&mut self, id: SegId, owner: AgentId) {
        self.next_seg = self.next_seg.max(id.0 + 1);
        self.seg_owner.entry(id).or_insert(owner);
    }

    fn actor_agent(ev: &TraceEvent) -> Result<AgentId> {
        ev.actor
            .agent()
            .ok_or_else(|| inconsistent(ev.t, "event requires an agent actor"))
    }

    fn update(&mut self, seg_id: SegId, t: Tick, author: Option<AgentId>) -> Result<()> {
        self.revisions.append(RevisionEvent {
            op: RevisionOp::Update,
            seg_id,
            t,
            author,
        })
    }

    fn observe(&mut self, agent: AgentId, seg: SegId, content: &str, at: Tick) -> Result<()> {
        self.net.agent_mut(agent)?.views.insert(
            seg,
            SegmentView {
                content: content.to_owned(),
                at,
            },
        );
        Ok(())
    }

    /// Applies one event. This is the only mutation path; live operations
    /// and replay both go through it.
    pub fn apply(&mut self, ev: TraceEvent) -> Result<()> {
        let t = ev.t;
        if t != self.net.clock() + 1 {
            return Err(inconsistent(
                t,
                &format!("expected t={}", self.net.clock() + 1),
            ));
        }
        match &ev.body {
            EventBody::Genesis { .. } => return Err(inconsistent(t, "second genesis")),
            EventBody::Seed { owner, segment } => {
                let author = owner.or(ev.actor.agent()).unwrap_or(self.net.root());
                match owner {
                    Some(a) => self.net.agent_mut(*a)?.memory.push(segment.clone())?,
                    None => self.workspace.insert(segment.clone())?,
                }
                self.note_seg(segment.id, author);
                self.update(segment.id, t, Some(author))?;
            }
            EventBody::Spawn {
                child,
                name,
                role,
                capabilities,
                declared_mode,
                lifespan,
                interaction,
                inherited,
                registration,
                ..
            } => {
                let parent = Self::actor_agent(&ev)?;
                if *child != self.net.peek_id() {
                    return Err(inconsistent(t, "child id out of sequence"));
                }
                self.net.live_agent(parent)?;
                let memory = MemoryStore::from_segments(Some(*child), inherited.iter().cloned())?;
                let record = AgentRecord {
                    id: *child,
                    name: name.clone(),
                    role: role.clone(),
                    capabilities: capabilities.clone(),
                    inherited: snapshot(&memory, t),
                    memory,
                    lifespan: *lifespan,
                    interaction: *interaction,
                    alive: true,
                    parent: Some(parent),
                    declared_mode: Some(*declared_mode),
                    spawned_at: t,
                    views: BTreeMap::new(),
                };
                if let Some(entry) = registration {
                    self.registry.restore(entry.clone())?;
                }
                self.net.insert_child(parent, record);
            }
            EventBody::Remember {
                segment,
                created,
                outcome,
            } => {
                let agent = Self::actor_agent(&ev)?;
                self.next_seg = self.next_seg.max(segment.id.0 + 1);
                if outcome.is_executed() {
                    let rec = self.net.agent_mut(agent)?;
                    if *created {
                        rec.memory.push(segment.clone())?;
                    } else {
                        rec.memory.overwrite(segment.id, &segment.content, t)?;
                    }
                    self.note_seg(segment.id, agent);
                    self.update(segment.id, t, Some(agent))?;
                    self.observe(agent, segment.id, &segment.content, t)?;
                }
            }
            EventBody::Inject { target, segment } => {
                self.net.agent_mut(*target)?.memory.push(segment.clone())?;
                self.note_seg(segment.id, *target);
            }
            EventBody::Write {
                seg_id,
                content,
                created,
                segment,
                outcome,
                ..
            } => {
                let agent = Self::actor_agent(&ev)?;
                self.next_seg = self.next_seg.max(seg_id.0 + 1);
                if outcome.is_executed() {
                    if *created {
                        let seg = segment
                            .clone()
                            .ok_or_else(|| inconsistent(t, "created write lacks segment"))?;
                        self.workspace.insert(seg)?;
                    } else {
                        self.workspace.overwrite(*seg_id, content, t)?;
                    }
                    self.note_seg(*seg_id, agent);
                    self.update(*seg_id, t, Some(agent))?;
                    self.observe(agent, *seg_id, content, t)?;
                }
            }
            EventBody::Read {
                seg_id,
                content,
                outcome,
                ..
            } => {
                let agent = Self::actor_agent(&ev)?;
                if outcome.is_executed() {
                    let content = content
                        .as_deref()
                        .ok_or_else(|| inconsistent(t, "executed read lacks content"))?;
                    self.observe(agent, *seg_id, content, t)?;
                }
            }
            EventBody::Invoke {
                effect, outcome, ..
            } => {
                if let (true, Some(effect)) = (outcome.is_executed(), effect) {
                    self.workspace.apply_effect(effect);
                }
            }
            EventBody::Terminate {
                target, outcome, ..
            } => {
                let agent = Self::actor_agent(&ev)?;
                match outcome {
                    TerminationStatus::Executed { .. } => {
                        self.net.agent_mut(*target)?.alive = false;
                    }
                    TerminationStatus::Suspended { request, parent } => {
                        self.next_request = self.next_request.max(request + 1);
                        self.pending.insert(
                            *request,
                            PendingTermination {
                                request: *request,
                                requester: agent,
                                target: *target,
                                parent: *parent,
                                at: t,
                            },
                        );
                    }
                    TerminationStatus::Denied { .. } => {}
                }
            }
            EventBody::Resolve {
                request,
                target,
                executed,
                ..
            } => {
                self.pending
                    .remove(request)
                    .ok_or(Error::UnknownRequest(*request))?;
                if *executed {
                    self.net.agent_mut(*target)?.alive = false;
                }
            }
            EventBody::Revoke { seg_id } => {
                self.revisions.append(RevisionEvent {
                    op: RevisionOp::Revoke,
                    seg_id: *seg_id,
                    t,
                    author: ev.actor.agent(),
                })?;
            }
            EventBody::Commit {
                key,
                value,
                source,
                observed_at,
                validity,
                outcome,
            } => {
                let agent = Self::actor_agent(&ev)?;
                if let CommitStatus::Committed {
                    seg_id, created, ..
                } = outcome
                {
                    if *created {
                        self.workspace.insert(MemorySegment {
                            id: *seg_id,
                            key: key.clone(),
                            label: self.config.lattice.bottom(),
                            content: value.clone(),
                            payload: None,
                            origin: Some(agent),
                            created_at: t,
                            revised_at: t,
                        })?;
                    } else {
                        self.workspace.overwrite(*seg_id, value, t)?;
                    }
                    self.note_seg(*seg_id, agent);
                    self.update(*seg_id, t, Some(agent))?;
                    self.observe(agent, *seg_id, value, t)?;
                    self.workspace.record_commit(CommitRecord {
                        agent,
                        key: key.clone(),
                        value: value.clone(),
                        source: *source,
                        observed_at: *observed_at,
                        validity: *validity,
                        at: t,
                    });
                }
            }
            EventBody::Message { .. } | EventBody::Ignored { .. } | EventBody::Rejected { .. } => {}
        }
        self.net.advance_to(t);
        self.events.push(ev);
        Ok(())
    }

    fn shadow_decision(&self, agent: AgentId, action: &Action) -> PolicyDecision {
        let (capabilities, resources, registered_at) = match self.net.agent(agent) {
            Ok(a) => (
                a.capabilities.clone(),
                self.config
                    .role_map
                    .resources(&a.role.name)
                    .cloned()
                    .unwrap_or_default(),
                a.spawned_at,
            ),
            Err(_) => Default::default(),
        };
        let entry = RegistryEntry {
            agent,
            capabilities,
            resources,
            registered_at,
        };
        decide_entry(&entry, action, &self.net)
    }

    /// Enforced: the registry decides. Permissive: always passes, carrying
    /// the reason the registry would have denied.
    fn gate(&self, agent: AgentId, action: &Action) -> Gate {
        match self.config.mode {
            Mode::Enforced => {
                let d = self.registry.decide(agent, action, &self.net);
                if d.is_permit() {
                    Gate::Pass(None)
                } else {
                    Gate::Deny(d)
                }
            }
            Mode::Permissive => {
                let d = self.shadow_decision(agent, action);
                Gate::Pass((!d.is_permit()).then_some(d.reason))
            }
        }
    }

    fn check_label(&self, label: &SensitivityLabel) -> Result<()> {
        if self.config.lattice.contains(label) {
            Ok(())
        } else {
            Err(Error::UnknownLevel(label.name().to_owned()))
        }
    }

    fn new_segment(
        &self,
        key: &str,
        content: &str,
        label: SensitivityLabel,
        origin: Option<AgentId>,
        payload: Option<PayloadMarker>,
    ) -> MemorySegment {
        let t = self.net.clock() + 1;
        MemorySegment {
            id: self.alloc_seg(),
            key: key.to_owned(),
            label,
            content: content.to_owned(),
            payload,
            origin,
            created_at: t,
            revised_at: t,
        }
    }

    /// Setup-time write into an agent's store (`Some`) or the workspace.
    pub fn seed(
        &mut self,
        owner: Option<AgentId>,
        key: &str,
        content: &str,
        label: SensitivityLabel,
    ) -> Result<SegId> {
        self.check_label(&label)?;
        let exists = match owner {
            Some(a) => self.net.agent(a)?.memory.get_by_key(key).is_some(),
            None => self.workspace.seg_id(key).is_some(),
        };
        if exists {
            return Err(Error::InvalidSpec(format!("segment key `{key}` already seeded")));
        }
        let author = owner.unwrap_or(self.net.root());
        let segment = self.new_segment(key, content, label, Some(author), None);
        let id = segment.id;
        self.emit(Principal::Agent(author), EventBody::Seed { owner, segment })?;
        Ok(id)
    }

    pub fn spawn(&mut self, parent: AgentId, spec: SpawnSpec) -> Result<AgentId> {
        let p = self.net.live_agent(parent)?;
        spec.validate()?;
        self.check_label(&spec.role.clearance)?;
        if !p.capabilities.contains(&Capability::Spawn) {
            return Err(Error::CapabilityDenied(parent));
        }
        if let Some(c) = spec
            .capabilities
            .iter()
            .find(|c| !c.is_parameterized() && !p.capabilities.contains(c))
        {
            return Err(Error::PrivilegeEscalation {
                parent,
                what: c.to_string(),
            });
        }
        let selector = spec.selector.as_ref();
        if spec.memory_mode == MemoryMode::InheritPartial {
            if let Some(bad) = selector.into_iter().flatten().find(|id| p.memory.get(**id).is_none()) {
                return Err(Error::BadSelector(*bad));
            }
        }
        let t = self.net.clock() + 1;
        let child = self.net.peek_id();
        let clearance = &spec.role.clearance;
        // Session-based children share the parent's context window in the
        // unmodified framework, whatever mode was declared.
        let framework_mode = match spec.interaction {
            Interaction::SessionBased => MemoryMode::InheritFull,
            Interaction::TaskOriented => spec.memory_mode,
        };
        let (effective_mode, store, excluded, registration) = match self.config.mode {
            Mode::Permissive => {
                let store = inherit(&p.memory, framework_mode, selector, Mode::Permissive, clearance)?;
                (framework_mode, store, Vec::new(), None)
            }
            Mode::Enforced => {
                let entry = entry_for(
                    &self.config.role_map,
                    child,
                    spec.capabilities.clone(),
                    &spec.role,
                    t,
                )?;
                let empty = BTreeSet::new();
                let held = self.registry.entry(parent).map_or(&empty, |e| &e.resources);
                if let Some(tool) = entry.resources.difference(held).next() {
                    return Err(Error::PrivilegeEscalation {
                        parent,
                        what: format!("tool {tool}"),
                    });
                }
                let store = inherit(&p.memory, spec.memory_mode, selector, Mode::Enforced, clearance)?;
                let framework =
                    inherit(&p.memory, framework_mode, selector, Mode::Permissive, clearance)?;
                let kept = store.ids();
                let excluded = framework.ids().into_iter().filter(|id| !kept.contains(id)).collect();
                (spec.memory_mode, store, excluded, Some(entry))
            }
        };
        let parent_memory = p
            .memory
            .segments()
            .iter()
            .map(|s| SegmentDigest {
                id: s.id,
                digest: s.content_digest(),
            })
            .collect();
        let body = EventBody::Spawn {
            child,
            name: spec.name,
            role: spec.role,
            capabilities: spec.capabilities,
            declared_mode: spec.memory_mode,
            effective_mode,
            selector: spec.selector,
            lifespan: spec.lifespan,
            interaction: spec.interaction,
            parent_memory,
            inherited: store.segments().to_vec(),
            excluded,
            registration,
        };
        self.emit(Principal::Agent(parent), body)?;
        Ok(child)
    }

    pub fn terminate(
        &mut self,
        actor: AgentId,
        target: AgentId,
        via_rule: Option<SegId>,
    ) -> Result<TerminationOutcome> {
        self.net.live_agent(actor)?;
        if !self.net.agent(target)?.alive {
            return Err(Error::AlreadyTerminated(target));
        }
        if target == self.net.root() {
            return Err(Error::RootTermination);
        }
        let action = Action::Structural(Capability::Kill(target));
        let (status, outcome) = match self.gate(actor, &action) {
            Gate::Pass(would_deny) => (
                TerminationStatus::Executed { would_deny },
                TerminationOutcome::Executed,
            ),
            Gate::Deny(d)
                if d.reason == Reason::KillSibling
                    && self.config.sibling_policy == SiblingPolicy::Suspend =>
            {
                let request = self.next_request;
                let parent = self
                    .net
                    .parent_of(actor)
                    .ok_or_else(|| inconsistent(self.net.clock() + 1, "sibling without parent"))?;
                (
                    TerminationStatus::Suspended { request, parent },
                    TerminationOutcome::SuspendedPendingParent(request),
                )
            }
            Gate::Deny(d) => (
                TerminationStatus::Denied { reason: d.reason },
                TerminationOutcome::Denied(d),
            ),
        };
        self.emit(
            Principal::Agent(actor),
            EventBody::Terminate {
                target,
                via_rule,
                outcome: status,
            },
        )?;
        Ok(outcome)
    }

    pub fn resolve_pending_termination(
        &mut self,
        parent: AgentId,
        request: u64,
        approve: bool,
    ) -> Result<ResolveOutcome> {
        let p = self
            .pending
            .get(&request)
            .cloned()
            .ok_or(Error::UnknownRequest(request))?;
        if p.parent != parent {
            return Err(Error::NotAuthorizedApprover {
                approver: parent,
                request,
            });
        }
        self.net.live_agent(parent)?;
        let alive = self.net.agent(p.target)?.alive;
        let executed = approve && alive;
        self.emit(
            Principal::Agent(parent),
            EventBody::Resolve {
                request,
                requester: p.requester,
                target: p.target,
                approve,
                executed,
            },
        )?;
        Ok(match (approve, alive) {
            (false, _) => ResolveOutcome::Rejected,
            (true, true) => ResolveOutcome::Terminated,
            (true, false) => ResolveOutcome::TargetGone,
        })
    }

    /// Adversarial injection: appends a payload-marked segment to the
    /// target's store.
    pub fn inject(
        &mut self,
        target: AgentId,
        key: &str,
        content: &str,
        label: SensitivityLabel,
        marker: PayloadMarker,
    ) -> Result<SegId> {
        self.net.live_agent(target)?;
        self.check_label(&label)?;
        let segment = self.new_segment(key, content, label, None, Some(marker));
        let id = segment.id;
        self.emit(Principal::Adversary, EventBody::Inject { target, segment })?;
        Ok(id)
    }

    /// Writes to the agent's own store. Requires access-memory.
    pub fn remember(
        &mut self,
        agent: AgentId,
        key: &str,
        content: &str,
        label: Option<SensitivityLabel>,
    ) -> Result<InterceptOutcome<SegId>> {
        let a = self.net.live_agent(agent)?;
        let (segment, created) = match a.memory.get_by_key(key) {
            Some(existing) => {
                let mut s = existing.clone();
                s.content = content.to_owned();
                s.revised_at = self.net.clock() + 1;
                (s, false)
            }
            None => {
                let label = label.unwrap_or_else(|| self.config.lattice.bottom());
                self.check_label(&label)?;
                (self.new_segment(key, content, label, Some(agent), None), true)
            }
        };
        let id = segment.id;
        let action = Action::Structural(Capability::AccessMemory);
        let (outcome, result) = match self.gate(agent, &action) {
            Gate::Pass(would_deny) => (Outcome::Executed { would_deny }, InterceptOutcome::Executed(id)),
            Gate::Deny(d) => (Outcome::Denied { reason: d.reason }, InterceptOutcome::Denied(d)),
        };
        self.emit(
            Principal::Agent(agent),
            EventBody::Remember {
                segment,
                created,
                outcome,
            },
        )?;
        Ok(result)
    }

    /// Writes a workspace segment through the `write_segment` tool.
    pub fn write_segment(
        &mut self,
        agent: AgentId,
        key: &str,
        content: &str,
        label: Option<SensitivityLabel>,
    ) -> Result<InterceptOutcome<SegId>> {
        self.net.live_agent(agent)?;
        let (seg_id, segment) = match self.workspace.seg_id(key) {
            Some(id) => (id, None),
            None => {
                let label = label.unwrap_or_else(|| self.config.lattice.bottom());
                self.check_label(&label)?;
                let s = self.new_segment(key, content, label, Some(agent), None);
                (s.id, Some(s))
            }
        };
        let action = Action::Tool(ToolId::new(tools::WRITE_SEGMENT));
        let (outcome, result) = match self.gate(agent, &action) {
            Gate::Pass(would_deny) => (
                Outcome::Executed { would_deny },
                InterceptOutcome::Executed(seg_id),
            ),
            Gate::Deny(d) => (Outcome::Denied { reason: d.reason }, InterceptOutcome::Denied(d)),
        };
        self.emit(
            Principal::Agent(agent),
            EventBody::Write {
                seg_id,
                key: key.to_owned(),
                content: content.to_owned(),
                created: segment.is_some(),
                segment,
                outcome,
            },
        )?;
        Ok(result)
    }

    /// Reads a segment from the agent's own store or the workspace through
    /// the `read_segment` tool.
    pub fn read_segment(
        &mut self,
        agent: AgentId,
        seg: SegId,
        via_rule: Option<SegId>,
    ) -> Result<InterceptOutcome<String>> {
        let a = self.net.live_agent(agent)?;
        let segment = a
            .memory
            .get(seg)
            .or_else(|| self.workspace.store().get(seg))
            .ok_or(Error::UnknownSegment(seg))?;
        let (key, content) = (segment.key.clone(), segment.content.clone());
        let action = Action::Tool(ToolId::new(tools::READ_SEGMENT));
        let (outcome, result, content) = match self.gate(agent, &action) {
            Gate::Pass(would_deny) => (
                Outcome::Executed { would_deny },
                InterceptOutcome::Executed(content.clone()),
                Some(content),
            ),
            Gate::Deny(d) => (
                Outcome::Denied { reason: d.reason },
                InterceptOutcome::Denied(d),
                None,
            ),
        };
        self.emit(
            Principal::Agent(agent),
            EventBody::Read {
                seg_id: seg,
                key,
                content,
                via_rule,
                outcome,
            },
        )?;
        Ok(result)
    }

    /// Invokes a simulated tool. A policy denial is an event; a tool failure
    /// is an error and leaves no trace.
    pub fn invoke_tool(
        &mut self,
        agent: AgentId,
        tool: &ToolId,
        target: Option<&str>,
        via_rule: Option<SegId>,
    ) -> Result<InterceptOutcome<ToolEffect>> {
        self.net.live_agent(agent)?;
        if !self.config.tools.contains(tool) {
            return Err(Error::UnknownTool(tool.clone()));
        }
        let action = Action::Tool(tool.clone());
        let (outcome, effect, result) = match self.gate(agent, &action) {
            Gate::Pass(would_deny) => {
                let effect = self.workspace.plan(tool, target)?;
                (
                    Outcome::Executed { would_deny },
                    Some(effect.clone()),
                    InterceptOutcome::Executed(effect),
                )
            }
            Gate::Deny(d) => (
                Outcome::Denied { reason: d.reason },
                None,
                InterceptOutcome::Denied(d),
            ),
        };
        self.emit(
            Principal::Agent(agent),
            EventBody::Invoke {
                tool: tool.clone(),
                target: target.map(str::to_owned),
                effect,
                via_rule,
                outcome,
            },
        )?;
        Ok(result)
    }

    /// Writes `value` under `key`, justified by the agent's last observation
    /// of `source`. Enforced mode refuses when that observation is stale or
    /// revoked.
    pub fn commit(
        &mut self,
        agent: AgentId,
        key: &str,
        value: &str,
        source: SegId,
    ) -> Result<CommitStatus> {
        let a = self.net.live_agent(agent)?;
        if self.workspace.store().get(source).is_none() {
            return Err(Error::UnknownSegment(source));
        }
        let observed_at = a
            .views
            .get(&source)
            .map(|v| v.at)
            .ok_or(Error::Unobserved { agent, seg: source })?;
        let validity = self.revisions.valid(source, observed_at);
        let action = Action::Tool(ToolId::new(tools::WRITE_SEGMENT));
        let status = match self.gate(agent, &action) {
            Gate::Deny(d) => CommitStatus::Denied { reason: d.reason },
            Gate::Pass(_) if self.config.mode == Mode::Enforced && !validity.is_valid() => {
                CommitStatus::Blocked
            }
            Gate::Pass(would_deny) => {
                let (seg_id, created) = match self.workspace.seg_id(key) {
                    Some(id) => (id, false),
                    None => (self.alloc_seg(), true),
                };
                CommitStatus::Committed {
                    seg_id,
                    created,
                    would_deny,
                }
            }
        };
        self.emit(
            Principal::Agent(agent),
            EventBody::Commit {
                key: key.to_owned(),
                value: value.to_owned(),
                source,
                observed_at,
                validity,
                outcome: status.clone(),
            },
        )?;
        Ok(status)
    }

    /// Parent-controlled revocation: the author must be the root or the
    /// parent of the segment's owner.
    pub fn revoke_segment(&mut self, author: AgentId, seg: SegId) -> Result<()> {
        self.net.live_agent(author)?;
        let owner = self.segment_owner(seg).ok_or(Error::UnknownSegment(seg))?;
        let authorized = author == self.net.root() || self.net.parent_of(owner) == Some(author);
        if !authorized {
            return Err(Error::NotAuthorizedRevoker { author, seg });
        }
        self.emit(Principal::Agent(author), EventBody::Revoke { seg_id: seg })?;
        Ok(())
    }

    /// Routes a message. Agent-to-agent traffic needs communicate on the
    /// sender; any traffic with the user needs user-interact on the agent.
    pub fn send_message(&mut self, from: Principal, to: Principal, text: &str) -> Result<Outcome> {
        let (subject, cap) = match (from, to) {
            (Principal::Agent(a), Principal::Agent(b)) => {
                self.net.live_agent(b)?;
                (a, Capability::Communicate)
            }
            (Principal::Agent(a), Principal::User) => (a, Capability::UserInteract),
            (Principal::User, Principal::Agent(b)) => (b, Capability::UserInteract),
            _ => {
                return Err(Error::InvalidSpec(format!(
                    "messages from {from} to {to} are not routable"
                )))
            }
        };
        self.net.live_agent(subject)?;
        let outcome = match self.gate(subject, &Action::Structural(cap)) {
            Gate::Pass(would_deny) => Outcome::Executed { would_deny },
            Gate::Deny(d) => Outcome::Denied { reason: d.reason },
        };
        self.emit(
            from,
            EventBody::Message {
                to,
                text: text.to_owned(),
                outcome: outcome.clone(),
            },
        )?;
        Ok(outcome)
    }

    /// Records a step that produced no action.
    pub fn note_ignored(
        &mut self,
        actor: Principal,
        text: &str,
        reason: IgnoreReason,
        seg_id: Option<SegId>,
    ) -> Result<Tick> {
        self.emit(
            actor,
            EventBody::Ignored {
                text: text.to_owned(),
                reason,
                seg_id,
            },
        )
    }

    /// Records a step whose kernel operation failed.
    pub fn note_rejected(&mut self, actor: Principal, action: &str, error: &Error) -> Result<Tick> {
        self.emit(
            actor,
            EventBody::Rejected {
                action: action.to_owned(),
                error: error.to_string(),
            },
        )
    }

    /// Policy enforcement point: mediates one invocation and reports the
    /// outcome. Every outcome is appended to the trace.
    pub fn intercept(
        &mut self,
        agent: AgentId,
        invocation: Invocation,
    ) -> Result<InterceptOutcome<InvocationResult>> {
        Ok(match invocation {
            Invocation::Tool { tool, target } => {
                lift(self.invoke_tool(agent, &tool, target.as_deref(), None)?, InvocationResult::Effect)
            }
            Invocation::Read(seg) => lift(self.read_segment(agent, seg, None)?, InvocationResult::Content),
            Invocation::Write { key, content } => {
                lift(self.write_segment(agent, &key, &content, None)?, InvocationResult::Written)
            }
            Invocation::Kill(target) => match self.terminate(agent, target, None)? {
                TerminationOutcome::Executed => InterceptOutcome::Executed(InvocationResult::Terminated),
                TerminationOutcome::Denied(d) => InterceptOutcome::Denied(d),
                TerminationOutcome::SuspendedPendingParent(r) => InterceptOutcome::Suspended(r),
            },
        })
    }
}

fn lift<T>(o: InterceptOutcome<T>, f: impl FnOnce(T) -> InvocationResult) -> InterceptOutcome<InvocationResult> {
    match o {
        InterceptOutcome::Executed(v) => InterceptOutcome::Executed(f(v)),
        InterceptOutcome::Denied(d) => InterceptOutcome::Denied(d),
        InterceptOutcome::Suspended(r) => InterceptOutcome::Suspended(r),
    }
}

fn entry_for(
    map: &RoleResourceMap,
    agent: AgentId,
    capabilities: BTreeSet<Capability>,
    role: &Role,
    at: Tick,
) -> Result<RegistryEntry> {
    let mut registry = Registry::new();
    registry
        .register(agent, capabilities, role, map, at)
        .cloned()
}

fn inconsistent(t: Tick, reason: &str) -> Error {
    Error::InconsistentEvent {
        t,
        reason: reason.to_owned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::{check_all, ViolationKind};

    fn caps(list: &[Capability]) -> BTreeSet<Capability> {
        list.iter().cloned().collect()
    }

    fn role(name: &str, level: &str) -> Role {
        Role {
            name: name.into(),
            clearance: Lattice::default().label(level).unwrap(),
        }
    }

    fn kernel(mode: Mode) -> Kernel {
        let mut config = KernelConfig::new(mode);
        config.role_map.insert("boss", tools::ALL.iter().map(|t| ToolId::new(*t)));
        config.role_map.insert(
            "worker",
            [tools::READ_SEGMENT, tools::WRITE_SEGMENT].map(ToolId::new),
        );
        config.role_map.insert("narrow", [ToolId::new(tools::READ_SEGMENT)]);
        Kernel::new(
            config,
            RootSpec {
                name: "main".into(),
                role: role("boss", "privileged"),
                capabilities: caps(&[
                    Capability::Spawn,
                    Capability::AccessMemory,
                    Capability::Communicate,
                    Capability::UserInteract,
                ]),
                lifespan: Lifespan::Persistent,
                interaction: Interaction::SessionBased,
            },
        )
        .unwrap()
    }

    fn spec(name: &str, role_name: &str, c: &[Capability]) -> SpawnSpec {
        SpawnSpec {
            name: name.into(),
            role: role(role_name, "task-local"),
            capabilities: caps(c),
            memory_mode: MemoryMode::AgentAgnostic,
            selector: None,
            lifespan: Lifespan::Persistent,
            interaction: Interaction::TaskOriented,
        }
    }

    /// main -> {b, c}, b -> d
    fn family(mode: Mode) -> (Kernel, AgentId, AgentId, AgentId) {
        let mut k = kernel(mode);
        let root = k.root();
        let b = k
            .spawn(root, spec("b", "worker", &[Capability::Spawn]))
            .unwrap();
        let c = k.spawn(root, spec("c", "worker", &[])).unwrap();
        let d = k.spawn(b, spec("d", "narrow", &[])).unwrap();
        (k, b, c, d)
    }

    #[test]
    fn spawn_adds_edge_and_ticks_clock() {
        let mut k = kernel(Mode::Enforced);
        let before = k.clock();
        let child = k.spawn(k.root(), spec("r", "narrow", &[])).unwrap();
        assert!(k.state().has_edge(k.root(), child));
        assert_eq!(k.clock(), before + 1);
        assert!(k.registry().entry(child).is_some());
    }

    #[test]
    fn spawn_without_capability_is_denied() {
        let (mut k, _, c, _) = family(Mode::Permissive);
        let before = k.clone();
        assert_eq!(
            k.spawn(c, spec("x", "narrow", &[])),
            Err(Error::CapabilityDenied(c))
        );
        assert_eq!(k, before);
    }

    #[test]
    fn spawn_cannot_grant_unheld_capability() {
        let (mut k, b, _, _) = family(Mode::Permissive);
        let err = k
            .spawn(b, spec("x", "narrow", &[Capability::Spawn, Capability::UserInteract]))
            .unwrap_err();
        assert!(matches!(err, Error::PrivilegeEscalation { parent, .. } if parent == b));
    }

    #[test]
    fn enforced_spawn_cannot_widen_tools() {
        let (mut k, b, _, _) = family(Mode::Enforced);
        let err = k.spawn(b, spec("x", "boss", &[])).unwrap_err();
        assert!(matches!(err, Error::PrivilegeEscalation { .. }));
        // Permissive mode does not consult the registry.
        let (mut k, b, _, _) = family(Mode::Permissive);
        assert!(k.spawn(b, spec("x", "boss", &[])).is_ok());
    }

    #[test]
    fn spawn_from_unknown_or_dead_parent() {
        let (mut k, _, _, d) = family(Mode::Permissive);
        assert_eq!(
            k.spawn(AgentId(99), spec("x", "narrow", &[])),
            Err(Error::UnknownAgent(AgentId(99)))
        );
        k.terminate(k.root(), d, None).unwrap();
        assert_eq!(
            k.spawn(d, spec("x", "narrow", &[])),
            Err(Error::AgentNotAlive(d))
        );
    }

    #[test]
    fn ids_are_strictly_increasing() {
        let (k, b, c, d) = family(Mode::Permissive);
        assert!(k.root() < b && b < c && c < d);
    }

    #[test]
    fn root_terminates_grandchild() {
        let (mut k, _, _, d) = family(Mode::Enforced);
        assert_eq!(k.terminate(k.root(), d, None), Ok(TerminationOutcome::Executed));
        assert!(!k.state().agent(d).unwrap().alive);
    }

    #[test]
    fn sibling_kill_by_mode() {
        let (mut k, b, c, _) = family(Mode::Permissive);
        assert_eq!(k.terminate(b, c, None), Ok(TerminationOutcome::Executed));
        let v = check_all(k.events(), k.state(), k.workspace(), &k.config().role_map);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::UnauthorizedTermination);

        let (mut k, b, c, _) = family(Mode::Enforced);
        assert_eq!(
            k.terminate(b, c, None),
            Ok(TerminationOutcome::SuspendedPendingParent(0))
        );
        assert!(k.state().agent(c).unwrap().alive);
        assert!(k.is_blocked(b));
    }

    #[test]
    fn flat_deny_policy() {
        let (mut k, b, c, _) = family(Mode::Enforced);
        k.config.sibling_policy = SiblingPolicy::Deny;
        let out = k.terminate(b, c, None).unwrap();
        assert!(matches!(out, TerminationOutcome::Denied(d) if d.reason == Reason::KillSibling));
        assert!(k.pending().is_empty());
    }

    #[test]
    fn non_edge_kill_is_denied_not_suspended() {
        let (mut k, _, c, d) = family(Mode::Enforced);
        let out = k.terminate(c, d, None).unwrap();
        assert!(matches!(out, TerminationOutcome::Denied(x) if x.reason == Reason::KillWithoutEdge));
    }

    #[test]
    fn second_termination_is_rejected() {
        let (mut k, b, _, d) = family(Mode::Enforced);
        k.terminate(b, d, None).unwrap();
        let before = k.clone();
        assert_eq!(k.terminate(b, d, None), Err(Error::AlreadyTerminated(d)));
        assert_eq!(k, before);
    }

    #[test]
    fn root_cannot_be_terminated() {
        let (mut k, b, _, _) = family(Mode::Permissive);
        assert_eq!(k.terminate(b, k.root(), None), Err(Error::RootTermination));
    }

    #[test]
    fn resolve_paths() {
        let (mut k, b, c, _) = family(Mode::Enforced);
        let root = k.root();
        k.terminate(b, c, None).unwrap();
        assert_eq!(
            k.resolve_pending_termination(b, 0, true),
            Err(Error::NotAuthorizedApprover {
                approver: b,
                request: 0
            })
        );
        assert_eq!(
            k.resolve_pending_termination(root, 7, true),
            Err(Error::UnknownRequest(7))
        );
        assert_eq!(
            k.resolve_pending_termination(root, 0, false),
            Ok(ResolveOutcome::Rejected)
        );
        assert!(k.state().agent(c).unwrap().alive);
        assert!(!k.is_blocked(b));

        k.terminate(b, c, None).unwrap();
        assert_eq!(
            k.resolve_pending_termination(root, 1, true),
            Ok(ResolveOutcome::Terminated)
        );
        assert!(!k.state().agent(c).unwrap().alive);
        let v = check_all(k.events(), k.state(), k.workspace(), &k.config().role_map);
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn injection_and_agnostic_spawn() {
        let mut k = kernel(Mode::Permissive);
        let root = k.root();
        let bottom = k.config().lattice.bottom();
        let m = PayloadMarker("ε".into());
        let s1 = k.inject(root, "p", "x", bottom.clone(), m.clone()).unwrap();
        let s2 = k.inject(root, "q", "y", bottom, m).unwrap();
        assert_ne!(s1, s2);
        assert!(k.state().agent(root).unwrap().memory.is_contaminated());
        let child = k.spawn(root, spec("c", "narrow", &[])).unwrap();
        assert!(!k.state().agent(child).unwrap().memory.is_contaminated());
    }

    #[test]
    fn workspace_write_read_overwrite() {
        let mut k = kernel(Mode::Enforced);
        let root = k.root();
        let id = k.write_segment(root, "r", "SAFE", None).unwrap().executed().unwrap();
        assert_eq!(
            k.read_segment(root, id, None).unwrap(),
            InterceptOutcome::Executed("SAFE".to_string())
        );
        k.write_segment(root, "r", "COMPROMISED", None).unwrap();
        assert_eq!(
            k.read_segment(root, id, None).unwrap().executed().as_deref(),
            Some("COMPROMISED")
        );
        assert_eq!(
            k.read_segment(root, SegId(77), None),
            Err(Error::UnknownSegment(SegId(77)))
        );
        let updates = k
            .revisions()
            .events()
            .iter()
            .filter(|e| e.seg_id == id && e.op == RevisionOp::Update)
            .count();
        assert_eq!(updates, 2);
    }

    #[test]
    fn enforced_tools_follow_role() {
        let (mut k, b, c, d) = family(Mode::Enforced);
        let root = k.root();
        k.seed(None, "payload.mp3", "inert", k.config().lattice.bottom())
            .unwrap();
        let chmod = ToolId::new(tools::FS_CHMOD);
        let out = k.invoke_tool(d, &chmod, Some("payload.mp3"), None).unwrap();
        assert!(matches!(out, InterceptOutcome::Denied(x) if x.reason == Reason::ToolNotGranted));
        assert!(!k.workspace().is_executable("payload.mp3"));

        let exec = ToolId::new(tools::EXEC);
        assert!(matches!(
            k.invoke_tool(root, &exec, Some("payload.mp3"), None),
            Err(Error::ToolFailure { .. })
        ));
        let written = k
            .intercept(
                b,
                Invocation::Write {
                    key: "note".into(),
                    content: "hi".into(),
                },
            )
            .unwrap();
        assert!(written.is_executed());
        assert_eq!(
            k.intercept(b, Invocation::Kill(c)).unwrap(),
            InterceptOutcome::Suspended(0)
        );
        assert_eq!(
            k.invoke_tool(root, &ToolId::new("teleport"), None, None),
            Err(Error::UnknownTool(ToolId::new("teleport")))
        );
    }

    #[test]
    fn own_memory_needs_access_memory() {
        let (mut k, _, c, _) = family(Mode::Enforced);
        let out = k.remember(c, "k", "v", None).unwrap();
        assert!(matches!(out, InterceptOutcome::Denied(d) if d.reason == Reason::CapabilityNotHeld));
        assert!(k.state().agent(c).unwrap().memory.is_empty());
        let root = k.root();
        assert!(k.remember(root, "k", "v", None).unwrap().is_executed());
    }

    #[test]
    fn commit_consults_revision_log() {
        for mode in Mode::ALL {
            let (mut k, b, _, _) = family(mode);
            let root = k.root();
            let src = k.write_segment(root, "state", "SAFE", None).unwrap().executed().unwrap();
            k.read_segment(root, src, None).unwrap();
            k.write_segment(b, "state", "COMPROMISED", None).unwrap();
            let status = k.commit(root, "verdict", "VERIFIED_SAFE", src).unwrap();
            match mode {
                Mode::Enforced => {
                    assert_eq!(status, CommitStatus::Blocked);
                    assert_eq!(k.workspace().value("verdict"), None);
                }
                Mode::Permissive => {
                    assert!(matches!(status, CommitStatus::Committed { .. }));
                    assert_eq!(k.workspace().value("verdict"), Some("VERIFIED_SAFE"));
                }
            }
        }
    }

    #[test]
    fn commit_requires_an_observation() {
        let (mut k, b, _, _) = family(Mode::Enforced);
        let src = k.write_segment(k.root(), "s", "x", None).unwrap().executed().unwrap();
        assert_eq!(
            k.commit(b, "v", "y", src),
            Err(Error::Unobserved { agent: b, seg: src })
        );
    }

    #[test]
    fn revocation_authority_and_boundary() {
        let (mut k, b, c, d) = family(Mode::Enforced);
        let root = k.root();
        let seg = k
            .inject(d, "eps", "payload", k.config().lattice.bottom(), PayloadMarker("ε".into()))
            .unwrap();
        assert_eq!(
            k.revoke_segment(c, seg),
            Err(Error::NotAuthorizedRevoker { author: c, seg })
        );
        k.revoke_segment(b, seg).unwrap();
        let t = k.clock();
        assert_eq!(k.segment_validity(d, seg), Ok(Validity::Revoked(t)));
        assert_eq!(k.revisions().valid(seg, t), Validity::Valid);
        k.revoke_segment(root, seg).unwrap();
        assert_eq!(
            k.revoke_segment(root, SegId(500)),
            Err(Error::UnknownSegment(SegId(500)))
        );
    }

    #[test]
    fn replay_rebuilds_identical_state() {
        for mode in Mode::ALL {
            let (mut k, b, c, d) = family(mode);
            let root = k.root();
            k.seed(Some(root), "brief", "b", k.config().lattice.bottom()).unwrap();
            let s = k.write_segment(b, "w", "1", None).unwrap().executed();
            k.inject(d, "e", "x", k.config().lattice.top(), PayloadMarker("ε".into()))
                .unwrap();
            k.terminate(b, c, None).unwrap();
            if let Some(s) = s {
                k.read_segment(root, s, None).unwrap();
            }
            k.send_message(Principal::User, Principal::Agent(root), "hi").unwrap();
            k.note_ignored(Principal::Agent(root), "hi", IgnoreReason::NoMatchingRule, None)
                .unwrap();
            let rebuilt = Kernel::replay(k.config().clone(), k.events()).unwrap();
            assert_eq!(rebuilt, k);
        }
    }

    #[test]
    fn replay_rejects_gaps_and_bad_genesis() {
        let (k, ..) = family(Mode::Permissive);
        let mut events = k.events().to_vec();
        events.remove(2);
        assert!(matches!(
            Kernel::replay(k.config().clone(), &events),
            Err(Error::InconsistentEvent { .. })
        ));
        assert!(Kernel::replay(k.config().clone(), &k.events()[1..]).is_err());
        assert!(Kernel::replay(k.config().clone(), &[]).is_err());
    }

    #[test]
    fn session_child_gets_full_copy_only_when_permissive() {
        for mode in Mode::ALL {
            let mut k = kernel(mode);
            let root = k.root();
            let lat = k.config().lattice.clone();
            let a = k.seed(Some(root), "a", "pub", lat.label("public").unwrap()).unwrap();
            k.seed(Some(root), "b", "secret", lat.label("privileged").unwrap())
                .unwrap();
            let mut s = spec("s", "narrow", &[]);
            s.memory_mode = MemoryMode::InheritPartial;
            s.selector = Some([a].into());
            s.interaction = Interaction::SessionBased;
            let child = k.spawn(root, s).unwrap();
            let held = k.state().agent(child).unwrap().memory.len();
            let excluded = match &k.events().last().unwrap().body {
                EventBody::Spawn { excluded, .. } => excluded.len(),
                _ => unreachable!(),
            };
            match mode {
                Mode::Permissive => assert_eq!((held, excluded), (2, 0)),
                Mode::Enforced => assert_eq!((held, excluded), (1, 1)),
            }
        }
    }

    #[test]
    fn user_messages_need_user_interact() {
        let (mut k, b, _, _) = family(Mode::Enforced);
        let out = k
            .send_message(Principal::User, Principal::Agent(b), "hello")
            .unwrap();
        assert!(matches!(out, Outcome::Denied { .. }));
        let out = k
            .send_message(Principal::User, Principal::Agent(k.root()), "hello")
            .unwrap();
        assert!(out.is_executed());
        assert!(k
            .send_message(Principal::Adversary, Principal::User, "x")
            .is_err());
    }
}
