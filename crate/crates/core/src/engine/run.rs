//! The seeded scheduler and step pipeline.
//!
//! A run first executes `schedule.order` (one step per named actor), then
//! proceeds in rounds: each round shuffles the runnable actors with a
//! ChaCha8 stream seeded from the run seed and steps each once. Every step
//! appends exactly one trace event.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checker::{check_all, ViolationKind};
use crate::engine::rules::{matching_rules, RuleAction};
use crate::engine::scenario::{Expected, Scenario, ScenarioError, Step, ADVERSARY, USER};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelConfig, RootSpec};
use crate::label::SensitivityLabel;
use crate::memory::{PayloadMarker, SegId};
use crate::network::{AgentId, Capability, Role, SpawnSpec};
use crate::registry::{RoleResourceMap, ToolId};
use crate::report::{DefenseKind, ExpectationResult, Report};
use crate::trace::{CommitStatus, EventBody, IgnoreReason, Principal, Trace};
use crate::{Mode, Tick, Violation};

/// Events allowed per run unless the scenario sets `schedule.max_steps`.
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

/// Marker attached to injected segments when the scenario names none.
pub const DEFAULT_MARKER: &str = "ε";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("setup failed: {0}")]
    Setup(Error),
    #[error("schedule.order[{index}]: actor `{actor}` has no runnable step")]
    NotRunnable { index: usize, actor: String },
    /// Work remains but no actor can make progress. Carries the kernel as it
    /// stood, so the partial trace can still be written and audited.
    #[error("deadlock at t={at}: {detail}")]
    DeadlockDetected {
        at: Tick,
        detail: String,
        kernel: Box<Kernel>,
    },
    #[error("step limit of {0} events exceeded")]
    StepLimit(u64),
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Trace,
    pub kernel: Kernel,
    pub violations: Vec<Violation>,
    pub report: Report,
    /// Agent names bound to the ids they were spawned with.
    pub names: BTreeMap<String, AgentId>,
}

impl RunOutput {
    pub fn trace_jsonl(&self) -> String {
        self.trace.to_jsonl(&self.violations)
    }
}

#[derive(Clone, Debug)]
enum Task {
    Script(Step),
    Rule { seg: SegId, action: RuleAction },
    Reread { source: SegId },
    Retry {
        key: String,
        value: String,
        source: SegId,
        expect: Option<String>,
    },
}

#[derive(Clone, Debug, Default)]
struct Actor {
    queue: VecDeque<Task>,
    inbox: VecDeque<String>,
}

impl Actor {
    fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.inbox.is_empty()
    }
}

struct Sim<'a> {
    scenario: &'a Scenario,
    kernel: Kernel,
    names: BTreeMap<String, AgentId>,
    /// Actors in a fixed order: user, adversary, then agents by name.
    order: Vec<String>,
    actors: BTreeMap<String, Actor>,
}

/// Builds the kernel configuration a scenario describes.
pub fn kernel_config(scenario: &Scenario, mode: Mode) -> Result<KernelConfig, ScenarioError> {
    let lattice = scenario.lattice()?;
    let mut role_map = RoleResourceMap::new();
    for (name, role) in &scenario.roles {
        role_map.insert(name.clone(), role.tools.iter().map(|t| ToolId::new(t.as_str())));
    }
    Ok(KernelConfig {
        mode,
        lattice,
        role_map,
        tools: scenario
            .tool_universe()
            .into_iter()
            .map(ToolId::new)
            .collect(),
        sibling_policy: scenario.scenario.sibling_policy,
    })
}

/// Executes a scenario in the given mode.
pub fn run(scenario: &Scenario, mode: Mode, seed: u64) -> Result<RunOutput, RunError> {
    scenario.validate()?;
    let config = kernel_config(scenario, mode)?;
    let role_map = config.role_map.clone();
    let mut sim = Sim::new(scenario, config)?;
    let max = scenario.schedule.max_steps.unwrap_or(DEFAULT_MAX_STEPS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for (index, actor) in scenario.schedule.order.iter().enumerate() {
        sim.tidy();
        if !sim.runnable(actor) {
            return Err(RunError::NotRunnable {
                index,
                actor: actor.clone(),
            });
        }
        sim.step(actor);
    }
    loop {
        sim.tidy();
        let mut ready: Vec<String> = sim
            .order
            .iter()
            .filter(|a| sim.runnable(a))
            .cloned()
            .collect();
        if ready.is_empty() {
            let stuck: Vec<String> = sim
                .actors
                .iter()
                .filter(|(_, a)| !a.is_idle())
                .map(|(n, a)| sim.describe_stuck(n, a))
                .collect();
            if stuck.is_empty() {
                break;
            }
            return Err(RunError::DeadlockDetected {
                at: sim.kernel.clock(),
                detail: stuck.join("; "),
                kernel: Box::new(sim.kernel),
            });
        }
        ready.shuffle(&mut rng);
        for a in &ready {
            sim.tidy();
            if sim.runnable(a) {
                sim.step(a);
                if sim.kernel.clock() > max {
                    return Err(RunError::StepLimit(max));
                }
            }
        }
    }

    let kernel = sim.kernel;
    let names = sim.names;
    let trace = kernel.trace(scenario.name(), seed);
    let violations = check_all(kernel.events(), kernel.state(), kernel.workspace(), &role_map);
    let mut report = Report::build(
        scenario.name(),
        seed,
        &kernel,
        trace.hash(),
        violations.clone(),
        None,
    );
    report.expectation = scenario
        .expected
        .get(mode)
        .map(|e| evaluate(e, &kernel, &names, &report));
    Ok(RunOutput {
        trace,
        kernel,
        violations,
        report,
        names,
    })
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario, config: KernelConfig) -> Result<Self, RunError> {
        let lattice = config.lattice.clone();
        let root_name = scenario
            .root_name()
            .expect("validated scenario has one root")
            .to_owned();
        let decl = &scenario.agents[&root_name];
        let role = role_of(scenario, &lattice, &decl.role).map_err(RunError::Setup)?;
        let root = RootSpec {
            name: root_name.clone(),
            role,
            capabilities: parse_caps(&decl.capabilities).map_err(RunError::Setup)?,
            lifespan: decl.lifespan,
            interaction: decl.interaction,
        };
        let mut kernel = Kernel::new(config, root).map_err(RunError::Setup)?;
        let label = |l: &Option<String>| match l {
            Some(n) => lattice.label(n),
            None => Ok(lattice.bottom()),
        };
        for w in &scenario.workspace {
            let l = label(&w.label).map_err(RunError::Setup)?;
            kernel
                .seed(None, &w.key, &w.content, l)
                .map_err(RunError::Setup)?;
        }
        let root_id = kernel.root();
        for m in &decl.memory {
            let l = label(&m.label).map_err(RunError::Setup)?;
            kernel
                .seed(Some(root_id), &m.key, &m.content, l)
                .map_err(RunError::Setup)?;
        }
        let mut order = vec![USER.to_owned(), ADVERSARY.to_owned()];
        order.extend(scenario.agents.keys().cloned());
        let mut actors = BTreeMap::new();
        for name in &order {
            let queue = scenario
                .behaviors
                .get(name)
                .into_iter()
                .flatten()
                .flat_map(Step::expand)
                .map(Task::Script)
                .collect();
            actors.insert(
                name.clone(),
                Actor {
                    queue,
                    inbox: VecDeque::new(),
                },
            );
        }
        let mut names = BTreeMap::new();
        names.insert(root_name, root_id);
        Ok(Self {
            scenario,
            kernel,
            names,
            order,
            actors,
        })
    }

    fn id(&self, name: &str) -> Result<AgentId> {
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| Error::NotSpawned(name.to_owned()))
    }

    fn alive(&self, name: &str) -> Option<bool> {
        let id = *self.names.get(name)?;
        self.kernel.state().agent(id).ok().map(|a| a.alive)
    }

    fn is_agent(name: &str) -> bool {
        name != USER && name != ADVERSARY
    }

    /// Drops work that can never run: steps of terminated agents, steps of
    /// agents that will never be spawned, and resolve steps whose target has
    /// already stopped.
    fn tidy(&mut self) {
        loop {
            let mut changed = false;
            let names: Vec<String> = self.actors.keys().cloned().collect();
            for name in &names {
                if !Self::is_agent(name) || self.actors[name].is_idle() {
                    continue;
                }
                let drop_all = match self.alive(name) {
                    Some(alive) => !alive,
                    None => !self.spawn_pending(name),
                };
                if drop_all {
                    let a = self.actors.get_mut(name).expect("actor");
                    a.queue.clear();
                    a.inbox.clear();
                    changed = true;
                    continue;
                }
                while let Some(Task::Script(Step::Resolve {
                    target: Some(t), ..
                })) = self.actors[name].queue.front()
                {
                    if self.alive(t) == Some(false) && !self.has_request_for(name, Some(t)) {
                        self.actors.get_mut(name).expect("actor").queue.pop_front();
                        changed = true;
                    } else {
                        break;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Whether some live or spawnable parent still has a spawn step for
    /// `name`.
    fn spawn_pending(&self, name: &str) -> bool {
        let Some(parent) = self.scenario.agents[name].parent.as_deref() else {
            return false;
        };
        let has_step = self.actors[parent].queue.iter().any(
            |t| matches!(t, Task::Script(Step::Spawn { agent }) if agent == name),
        );
        has_step
            && match self.alive(parent) {
                Some(alive) => alive,
                None => self.spawn_pending(parent),
            }
    }

    fn request_for(&self, approver: &str, target: Option<&str>) -> Option<u64> {
        let me = *self.names.get(approver)?;
        let target = match target {
            Some(t) => Some(*self.names.get(t)?),
            None => None,
        };
        self.kernel
            .pending()
            .values()
            .find(|p| p.parent == me && target.is_none_or(|t| t == p.target))
            .map(|p| p.request)
    }

    fn has_request_for(&self, approver: &str, target: Option<&str>) -> bool {
        self.request_for(approver, target).is_some()
    }

    fn runnable(&self, name: &str) -> bool {
        let actor = &self.actors[name];
        if !Self::is_agent(name) {
            return !actor.queue.is_empty();
        }
        let Some(id) = self.names.get(name).copied() else {
            return false;
        };
        if self.alive(name) != Some(true) || self.kernel.is_blocked(id) {
            return false;
        }
        if !actor.inbox.is_empty() {
            return true;
        }
        match actor.queue.front() {
            None => false,
            Some(Task::Script(Step::Resolve { target, .. })) => {
                self.has_request_for(name, target.as_deref())
            }
            Some(_) => true,
        }
    }

    fn describe_stuck(&self, name: &str, a: &Actor) -> String {
        let next = match a.queue.front() {
            Some(Task::Script(s)) => s.to_string(),
            Some(_) => "follow-up".into(),
            None => "inbox".into(),
        };
        let why = match self.names.get(name) {
            Some(id) if self.kernel.is_blocked(*id) => "blocked on a suspended termination",
            Some(_) => "waiting",
            None => "not spawned",
        };
        format!("{name} {why} before `{next}`")
    }

    /// Runs one step of `name`, recording a rejection if the kernel refuses.
    fn step(&mut self, name: &str) {
        let principal = match name {
            USER => Principal::User,
            ADVERSARY => Principal::Adversary,
            n => Principal::Agent(self.names[n]),
        };
        let actor = self.actors.get_mut(name).expect("actor");
        let (label, result) = if let Some(text) = actor.inbox.pop_front() {
            let me = principal.agent().expect("only agents receive messages");
            (format!("handle message {text:?}"), self.handle_message(name, me, &text))
        } else {
            let task = actor.queue.pop_front().expect("runnable actor has a task");
            let label = match &task {
                Task::Script(s) => s.to_string(),
                Task::Rule { seg, .. } => format!("rule {seg}"),
                Task::Reread { source } => format!("revalidate {source}"),
                Task::Retry { key, .. } => format!("retry commit {key}"),
            };
            (label, self.run_task(name, principal, task))
        };
        if let Err(e) = result {
            self.kernel
                .note_rejected(principal, &label, &e)
                .expect("recording a rejection cannot fail");
        }
    }

    fn label(&self, l: &Option<String>) -> Result<Option<SensitivityLabel>> {
        l.as_deref()
            .map(|n| self.kernel.config().lattice.label(n))
            .transpose()
    }

    fn run_task(&mut self, name: &str, who: Principal, task: Task) -> Result<()> {
        match (task, who) {
            (Task::Script(step), Principal::Agent(me)) => self.agent_step(name, me, step),
            (Task::Script(step), _) => self.pseudo_step(who, step),
            (Task::Rule { seg, action }, Principal::Agent(me)) => self.run_rule(me, seg, action),
            (Task::Reread { source }, Principal::Agent(me)) => {
                self.kernel.read_segment(me, source, None).map(drop)
            }
            (
                Task::Retry {
                    key,
                    value,
                    source,
                    expect,
                },
                Principal::Agent(me),
            ) => {
                let seen = self
                    .kernel
                    .state()
                    .agent(me)?
                    .views
                    .get(&source)
                    .map(|v| v.content.clone());
                match expect {
                    Some(e) if seen.as_deref() != Some(e.as_str()) => self
                        .kernel
                        .note_ignored(who, &value, IgnoreReason::SourceChanged, Some(source))
                        .map(drop),
                    _ => self.kernel.commit(me, &key, &value, source).map(drop),
                }
            }
            _ => unreachable!("follow-up tasks belong to agents"),
        }
    }

    fn pseudo_step(&mut self, who: Principal, step: Step) -> Result<()> {
        match step {
            Step::Send { to, text } => {
                let target = self.id(&to)?;
                let outcome = self
                    .kernel
                    .send_message(who, Principal::Agent(target), &text)?;
                if outcome.is_executed() {
                    self.actors.get_mut(&to).expect("actor").inbox.push_back(text);
                }
                Ok(())
            }
            Step::Inject {
                target,
                key,
                content,
                label,
                marker,
            } => {
                let target = self.id(&target)?;
                let label = self
                    .label(&label)?
                    .unwrap_or_else(|| self.kernel.config().lattice.bottom());
                let marker = PayloadMarker(marker.unwrap_or_else(|| DEFAULT_MARKER.into()));
                self.kernel
                    .inject(target, &key, &content, label, marker)
                    .map(drop)
            }
            other => Err(Error::InvalidSpec(format!(
                "`{}` is not available to {who}",
                other.op()
            ))),
        }
    }

    fn agent_step(&mut self, name: &str, me: AgentId, step: Step) -> Result<()> {
        match step {
            Step::Spawn { agent } => {
                let decl = &self.scenario.agents[&agent];
                let lattice = &self.kernel.config().lattice;
                let parent = self.kernel.state().agent(me)?;
                let selector = match &decl.selector {
                    None => None,
                    Some(keys) => Some(
                        keys.iter()
                            .map(|k| {
                                parent
                                    .memory
                                    .get_by_key(k)
                                    .map(|s| s.id)
                                    .ok_or_else(|| Error::UnknownSegmentKey(k.clone()))
                            })
                            .collect::<Result<_>>()?,
                    ),
                };
                let spec = SpawnSpec {
                    name: agent.clone(),
                    role: role_of(self.scenario, lattice, &decl.role)?,
                    capabilities: parse_caps(&decl.capabilities)?,
                    memory_mode: decl.memory_mode,
                    selector,
                    lifespan: decl.lifespan,
                    interaction: decl.interaction,
                };
                let id = self.kernel.spawn(me, spec)?;
                self.names.insert(agent, id);
                Ok(())
            }
            Step::Remember {
                key,
                content,
                label,
            } => {
                let label = self.label(&label)?;
                self.kernel.remember(me, &key, &content, label).map(drop)
            }
            Step::Write {
                key,
                content,
                label,
            } => {
                let label = self.label(&label)?;
                self.kernel.write_segment(me, &key, &content, label).map(drop)
            }
            Step::Read { key } => {
                let seg = self.kernel.resolve_key(me, &key)?;
                self.kernel.read_segment(me, seg, None).map(drop)
            }
            Step::Invoke { tool, target } => self
                .kernel
                .invoke_tool(me, &ToolId::new(tool), target.as_deref(), None)
                .map(drop),
            Step::Commit {
                key,
                value,
                source,
                expect,
            } => {
                let src = self
                    .kernel
                    .workspace()
                    .seg_id(&source)
                    .ok_or_else(|| Error::UnknownSegmentKey(source.clone()))?;
                let status = self.kernel.commit(me, &key, &value, src)?;
                if status == CommitStatus::Blocked {
                    let q = &mut self.actors.get_mut(name).expect("actor").queue;
                    q.push_front(Task::Retry {
                        key,
                        value,
                        source: src,
                        expect,
                    });
                    q.push_front(Task::Reread { source: src });
                }
                Ok(())
            }
            Step::Terminate { target } => {
                let target = self.id(&target)?;
                self.kernel.terminate(me, target, None).map(drop)
            }
            Step::Resolve { target, approve } => {
                let request = self
                    .request_for(name, target.as_deref())
                    .ok_or_else(|| Error::InvalidSpec("no pending request to resolve".into()))?;
                self.kernel
                    .resolve_pending_termination(me, request, approve)
                    .map(drop)
            }
            Step::Send { to, text } => {
                let (dest, inbox) = if to == USER {
                    (Principal::User, None)
                } else {
                    (Principal::Agent(self.id(&to)?), Some(to))
                };
                let outcome = self.kernel.send_message(Principal::Agent(me), dest, &text)?;
                if let (true, Some(to)) = (outcome.is_executed(), inbox) {
                    self.actors.get_mut(&to).expect("actor").inbox.push_back(text);
                }
                Ok(())
            }
            Step::Revoke { key, holder } => {
                let seg = match holder {
                    Some(h) => {
                        let id = self.id(&h)?;
                        self.kernel
                            .state()
                            .agent(id)?
                            .memory
                            .get_by_key(&key)
                            .map(|s| s.id)
                            .ok_or_else(|| Error::UnknownSegmentKey(key.clone()))?
                    }
                    None => self.kernel.resolve_key(me, &key)?,
                };
                self.kernel.revoke_segment(me, seg)
            }
            Step::Inject { .. } => Err(Error::InvalidSpec(
                "`inject` is performed by the adversary".into(),
            )),
            Step::Repeat { .. } => unreachable!("repeat is expanded when queued"),
        }
    }

    fn handle_message(&mut self, name: &str, me: AgentId, text: &str) -> Result<()> {
        let store = &self.kernel.state().agent(me)?.memory;
        let mut rules = matching_rules(store, text).into_iter();
        let Some(first) = rules.next() else {
            return self
                .kernel
                .note_ignored(Principal::Agent(me), text, IgnoreReason::NoMatchingRule, None)
                .map(drop);
        };
        let q = &mut self.actors.get_mut(name).expect("actor").queue;
        for r in rules.rev() {
            q.push_front(Task::Rule {
                seg: r.seg_id,
                action: r.action,
            });
        }
        self.run_rule(me, first.seg_id, first.action)
    }

    fn run_rule(&mut self, me: AgentId, seg: SegId, action: RuleAction) -> Result<()> {
        if self.kernel.mode() == Mode::Enforced
            && self.kernel.segment_validity(me, seg)?.is_revoked()
        {
            return self
                .kernel
                .note_ignored(
                    Principal::Agent(me),
                    &format!("{action:?}"),
                    IgnoreReason::RevokedRule,
                    Some(seg),
                )
                .map(drop);
        }
        match action {
            RuleAction::Read { key } => {
                let target = self.kernel.resolve_key(me, &key)?;
                self.kernel.read_segment(me, target, Some(seg)).map(drop)
            }
            RuleAction::Write { key, content } => self
                .kernel
                .write_segment(me, &key, &content, None)
                .map(drop),
            RuleAction::Invoke { tool, target } => self
                .kernel
                .invoke_tool(me, &ToolId::new(tool), target.as_deref(), Some(seg))
                .map(drop),
            RuleAction::Terminate { agent } => {
                let target = self.id(&agent)?;
                self.kernel.terminate(me, target, Some(seg)).map(drop)
            }
        }
    }
}

fn role_of(
    scenario: &Scenario,
    lattice: &crate::label::Lattice,
    name: &str,
) -> Result<Role> {
    let decl = scenario
        .roles
        .get(name)
        .ok_or_else(|| Error::UnknownRole(name.to_owned()))?;
    Ok(Role {
        name: name.to_owned(),
        clearance: lattice.label(&decl.clearance)?,
    })
}

fn parse_caps(caps: &[String]) -> Result<std::collections::BTreeSet<Capability>> {
    caps.iter()
        .map(|c| c.parse::<Capability>().map_err(Error::InvalidSpec))
        .collect()
}

/// Compares a finished run against the scenario's expectation.
pub fn evaluate(
    e: &Expected,
    kernel: &Kernel,
    names: &BTreeMap<String, AgentId>,
    report: &Report,
) -> ExpectationResult {
    let mut miss = Vec::new();
    for kind in ViolationKind::ALL {
        let want = e.violations.get(kind.as_str()).copied().unwrap_or(0);
        let got = report.count(kind);
        if want != got {
            miss.push(format!("violations.{kind}: expected {want}, observed {got}"));
        }
    }
    for kind in DefenseKind::ALL {
        let want = e.defenses.get(kind.as_str()).copied().unwrap_or(0);
        let got = report.defense_count(kind);
        if want != got {
            miss.push(format!("defenses.{kind}: expected {want}, observed {got}"));
        }
    }
    let ws = kernel.workspace();
    for (k, want) in &e.workspace {
        match ws.value(k) {
            Some(got) if got == want => {}
            Some(got) => miss.push(format!("workspace.{k}: expected {want:?}, observed {got:?}")),
            None => miss.push(format!("workspace.{k}: expected {want:?}, but the key is absent")),
        }
    }
    for k in &e.absent {
        if let Some(got) = ws.value(k) {
            miss.push(format!("workspace.{k}: expected absent, observed {got:?}"));
        }
    }
    let alive = |n: &str| {
        names
            .get(n)
            .and_then(|id| kernel.state().agent(*id).ok())
            .map(|a| a.alive)
    };
    for n in &e.alive {
        if alive(n) != Some(true) {
            miss.push(format!("alive: {n} is not alive"));
        }
    }
    for n in &e.terminated {
        if alive(n) != Some(false) {
            miss.push(format!("terminated: {n} was not terminated"));
        }
    }
    for f in &e.executable {
        if !ws.is_executable(f) {
            miss.push(format!("executable: {f} is not executable"));
        }
    }
    for f in &e.not_executable {
        if ws.is_executable(f) {
            miss.push(format!("not_executable: {f} is executable"));
        }
    }
    for f in &e.executed {
        if !ws.executed().contains(f) {
            miss.push(format!("executed: {f} never ran"));
        }
    }
    for f in &e.persistence {
        if !ws.persistence().contains(f) {
            miss.push(format!("persistence: {f} not registered"));
        }
    }
    let read_keys = |n: &str| -> Vec<String> {
        let Some(id) = names.get(n) else {
            return Vec::new();
        };
        kernel
            .events()
            .iter()
            .filter(|ev| ev.actor == Principal::Agent(*id))
            .filter_map(|ev| match &ev.body {
                EventBody::Read { key, outcome, .. } if outcome.is_executed() => Some(key.clone()),
                _ => None,
            })
            .collect()
    };
    for (n, keys) in &e.reads {
        let got = read_keys(n);
        for k in keys.iter().filter(|k| !got.contains(k)) {
            miss.push(format!("reads.{n}: never read {k}"));
        }
    }
    for (n, keys) in &e.no_reads {
        let got = read_keys(n);
        for k in keys.iter().filter(|k| got.contains(k)) {
            miss.push(format!("no_reads.{n}: read {k}"));
        }
    }
    ExpectationResult {
        matched: miss.is_empty(),
        mismatches: miss,
    }
}
