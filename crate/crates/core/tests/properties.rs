//! Property tests. Each property is checked against an oracle written here,
//! independently of the implementation under test.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use spawnguard_core::checker::check_all;
use spawnguard_core::engine::{bundled_scenarios, run};
use spawnguard_core::memory::{contamination_reach, inherit, project};
use spawnguard_core::registry::tools;
use spawnguard_core::revision::{RevisionEvent, RevisionLog, RevisionOp, Validity};
use spawnguard_core::trace::{parse_jsonl, Principal};
use spawnguard_core::{
    AgentId, Capability, Interaction, Kernel, KernelConfig, Lattice, Lifespan, MemoryMode,
    MemorySegment, MemoryStore, Mode, PayloadMarker, Role, RootSpec, SegId, SensitivityLabel,
    SpawnSpec, ToolId,
};

const LEVELS: usize = 3;

fn label(rank: usize) -> SensitivityLabel {
    Lattice::default().at(rank).unwrap()
}

fn store_from(labels: &[usize]) -> MemoryStore {
    let segs: Vec<MemorySegment> = labels
        .iter()
        .enumerate()
        .map(|(i, &r)| MemorySegment {
            id: SegId(i as u64 * 3 + 1),
            key: format!("k{i}"),
            label: label(r),
            content: format!("c{i}"),
            payload: None,
            origin: None,
            created_at: i as u64,
            revised_at: i as u64,
        })
        .collect();
    MemoryStore::from_segments(None, segs).unwrap()
}

/// Per-segment filter: keep a segment iff its rank is at most the clearance rank.
fn filter_oracle(labels: &[usize], clearance: usize) -> Vec<SegId> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &r)| r <= clearance)
        .map(|(i, _)| SegId(i as u64 * 3 + 1))
        .collect()
}

fn ids(store: &MemoryStore) -> Vec<SegId> {
    store.segments().iter().map(|s| s.id).collect()
}

proptest! {
    #[test]
    fn projection_matches_filter(labels in prop::collection::vec(0..LEVELS, 0..24), c in 0..LEVELS) {
        let store = store_from(&labels);
        let p = project(&store, &label(c));
        prop_assert_eq!(ids(&p), filter_oracle(&labels, c));
        prop_assert_eq!(ids(&project(&p, &label(c))), ids(&p));
    }

    #[test]
    fn projection_is_monotone(labels in prop::collection::vec(0..LEVELS, 0..24), a in 0..LEVELS, b in 0..LEVELS) {
        let (lo, hi) = (a.min(b), a.max(b));
        let store = store_from(&labels);
        let small: BTreeSet<_> = ids(&project(&store, &label(lo))).into_iter().collect();
        let big: BTreeSet<_> = ids(&project(&store, &label(hi))).into_iter().collect();
        prop_assert!(small.is_subset(&big));
    }

    #[test]
    fn inheritance_stays_within_declared_bound(
        labels in prop::collection::vec(0..LEVELS, 1..16),
        pick in prop::collection::vec(any::<bool>(), 16),
        mode_ix in 0..3usize,
        c in 0..LEVELS,
    ) {
        let parent = store_from(&labels);
        let mode = [MemoryMode::InheritFull, MemoryMode::InheritPartial, MemoryMode::AgentAgnostic][mode_ix];
        let selector: BTreeSet<SegId> = parent
            .segments()
            .iter()
            .zip(&pick)
            .filter(|(_, &p)| p)
            .map(|(s, _)| s.id)
            .collect();
        let bound: BTreeSet<SegId> = match mode {
            MemoryMode::InheritFull => parent.ids(),
            MemoryMode::InheritPartial => selector.clone(),
            MemoryMode::AgentAgnostic => BTreeSet::new(),
        };
        for enforcement in Mode::ALL {
            let child = inherit(&parent, mode, Some(&selector), enforcement, &label(c)).unwrap();
            let got = child.ids();
            let expected: BTreeSet<SegId> = match enforcement {
                Mode::Permissive => bound.clone(),
                Mode::Enforced => bound
                    .iter()
                    .filter(|id| parent.get(**id).unwrap().label.rank() as usize <= c)
                    .copied()
                    .collect(),
            };
            prop_assert_eq!(got, expected);
        }
    }
}

/// Direct evaluation of the validity predicate: revoked if some revoke of the
/// segment lies strictly after `t0`, else stale if some update does, else valid.
/// The tick reported is the earliest such event.
fn validity_oracle(events: &[(bool, u64, u64)], seg: u64, t0: u64) -> Validity {
    let after = |want_revoke: bool| {
        events
            .iter()
            .filter(|(r, s, t)| *r == want_revoke && *s == seg && *t > t0)
            .map(|(_, _, t)| *t)
            .min()
    };
    if let Some(t) = after(true) {
        Validity::Revoked(t)
    } else if let Some(t) = after(false) {
        Validity::Stale(t)
    } else {
        Validity::Valid
    }
}

proptest! {
    #[test]
    fn validity_matches_quantifier_oracle(
        raw in prop::collection::vec((any::<bool>(), 0..3u64, 1..4u64), 0..20),
        t0 in 0..60u64,
    ) {
        let mut log = RevisionLog::new();
        let mut t = 0;
        let mut events = Vec::new();
        for (revoke, seg, gap) in raw {
            t += gap;
            let op = if revoke { RevisionOp::Revoke } else { RevisionOp::Update };
            log.append(RevisionEvent { op, seg_id: SegId(seg), t, author: None }).unwrap();
            events.push((revoke, seg, t));
        }
        for seg in 0..3 {
            prop_assert_eq!(log.valid(SegId(seg), t0), validity_oracle(&events, seg, t0));
        }
        let (from, to) = (t0 / 2, t0);
        let audited: Vec<u64> = log.audit(from, to).unwrap().iter().map(|e| e.t).collect();
        let expected: Vec<u64> = events.iter().map(|e| e.2).filter(|t| (from..=to).contains(t)).collect();
        prop_assert_eq!(audited, expected);
    }
}

#[derive(Clone, Debug)]
enum Op {
    Spawn { parent: usize, role: usize, caps: u8, mode: usize, session: bool },
    Terminate { actor: usize, target: usize },
    Resolve { approver: usize, approve: bool },
    Inject { target: usize, rank: usize },
    Remember { agent: usize, rank: usize },
    Write { agent: usize, key: u8 },
    Read { agent: usize, key: u8 },
    Invoke { agent: usize, tool: usize },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (any::<usize>(), 0..3usize, any::<u8>(), 0..3usize, any::<bool>())
            .prop_map(|(parent, role, caps, mode, session)| Op::Spawn { parent, role, caps, mode, session }),
        2 => (any::<usize>(), any::<usize>()).prop_map(|(actor, target)| Op::Terminate { actor, target }),
        1 => (any::<usize>(), any::<bool>()).prop_map(|(approver, approve)| Op::Resolve { approver, approve }),
        1 => (any::<usize>(), 0..LEVELS).prop_map(|(target, rank)| Op::Inject { target, rank }),
        1 => (any::<usize>(), 0..LEVELS).prop_map(|(agent, rank)| Op::Remember { agent, rank }),
        1 => (any::<usize>(), 0..3u8).prop_map(|(agent, key)| Op::Write { agent, key }),
        1 => (any::<usize>(), 0..3u8).prop_map(|(agent, key)| Op::Read { agent, key }),
        1 => (any::<usize>(), 0..tools::ALL.len()).prop_map(|(agent, tool)| Op::Invoke { agent, tool }),
    ]
}

const ROLES: [(&str, usize, &[&str]); 3] = [
    ("lead", 2, &tools::ALL),
    ("worker", 1, &[tools::READ_SEGMENT, tools::WRITE_SEGMENT, tools::FS_WRITE]),
    ("reader", 0, &[tools::READ_SEGMENT]),
];

const CAPS: [Capability; 4] = [
    Capability::Spawn,
    Capability::AccessMemory,
    Capability::Communicate,
    Capability::UserInteract,
];

fn fresh(mode: Mode) -> Kernel {
    let mut config = KernelConfig::new(mode);
    for (name, _, t) in ROLES {
        config.role_map.insert(name, t.iter().map(|t| ToolId::new(*t)));
    }
    let mut k = Kernel::new(
        config,
        RootSpec {
            name: "root".into(),
            role: Role { name: "lead".into(), clearance: label(2) },
            capabilities: CAPS.into_iter().collect(),
            lifespan: Lifespan::Persistent,
            interaction: Interaction::SessionBased,
        },
    )
    .unwrap();
    k.seed(None, "f", "data", label(0)).unwrap();
    k
}

/// Applies `op`, returning whether the kernel accepted it.
fn apply(k: &mut Kernel, op: &Op, n: &mut usize) -> bool {
    let agents: Vec<AgentId> = k.state().agents().map(|a| a.id).collect();
    let pick = |i: usize| agents[i % agents.len()];
    match *op {
        Op::Spawn { parent, role, caps, mode, session } => {
            let (name, rank, _) = ROLES[role];
            *n += 1;
            k.spawn(
                pick(parent),
                SpawnSpec {
                    name: format!("a{n}"),
                    role: Role { name: name.into(), clearance: label(rank) },
                    capabilities: CAPS
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| caps & (1 << i) != 0)
                        .map(|(_, c)| *c)
                        .collect(),
                    memory_mode: [MemoryMode::InheritFull, MemoryMode::AgentAgnostic, MemoryMode::InheritFull][mode],
                    selector: None,
                    lifespan: Lifespan::Persistent,
                    interaction: if session { Interaction::SessionBased } else { Interaction::TaskOriented },
                },
            )
            .is_ok()
        }
        Op::Terminate { actor, target } => k.terminate(pick(actor), pick(target), None).is_ok(),
        Op::Resolve { approver, approve } => {
            let a = pick(approver);
            match k.pending().values().find(|p| p.parent == a).map(|p| p.request) {
                Some(r) => k.resolve_pending_termination(a, r, approve).is_ok(),
                None => false,
            }
        }
        Op::Inject { target, rank } => k
            .inject(pick(target), "eps", "payload", label(rank), PayloadMarker("ε".into()))
            .is_ok(),
        Op::Remember { agent, rank } => k.remember(pick(agent), "note", "x", Some(label(rank))).is_ok(),
        Op::Write { agent, key } => k.write_segment(pick(agent), &format!("w{key}"), "v", None).is_ok(),
        Op::Read { agent, key } => match k.resolve_key(pick(agent), &format!("w{key}")) {
            Ok(seg) => k.read_segment(pick(agent), seg, None).is_ok(),
            Err(_) => false,
        },
        Op::Invoke { agent, tool } => k
            .invoke_tool(pick(agent), &ToolId::new(tools::ALL[tool]), Some("f"), None)
            .is_ok(),
    }
}

/// Independent arborescence check: exactly one parent per non-root agent,
/// root has none, and walking parents from any agent reaches the root.
fn arborescence_oracle(k: &Kernel) -> bool {
    let state = k.state();
    let mut parents: BTreeMap<AgentId, Vec<AgentId>> = BTreeMap::new();
    for &(p, c) in state.edges() {
        parents.entry(c).or_default().push(p);
    }
    let ids: BTreeSet<AgentId> = state.agents().map(|a| a.id).collect();
    if parents.contains_key(&state.root()) {
        return false;
    }
    ids.iter().all(|&a| {
        if a == state.root() {
            return true;
        }
        let mut cur = a;
        for _ in 0..=ids.len() {
            match parents.get(&cur).map(Vec::as_slice) {
                Some([p]) => cur = *p,
                _ => return false,
            }
            if cur == state.root() {
                return true;
            }
        }
        false
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kernel_invariants_hold_under_random_ops(ops in prop::collection::vec(op(), 1..60), enforced in any::<bool>()) {
        let mode = if enforced { Mode::Enforced } else { Mode::Permissive };
        let mut k = fresh(mode);
        let mut n = 0;
        for op in &ops {
            let before = k.clone();
            let clock = k.clock();
            if apply(&mut k, op, &mut n) {
                prop_assert!(k.clock() > clock);
            } else {
                prop_assert_eq!(&k, &before, "rejected {:?} mutated state", op);
            }
            prop_assert!(arborescence_oracle(&k));
            prop_assert!(k.state().validate_arborescence().passed());
        }
        let state = k.state();
        for a in state.agents() {
            if let Some(p) = a.parent {
                let parent = state.agent(p).unwrap();
                prop_assert!(p < a.id);
                let plain = |c: &BTreeSet<Capability>| -> BTreeSet<Capability> {
                    c.iter().filter(|c| !c.is_parameterized()).copied().collect()
                };
                prop_assert!(plain(&a.capabilities).is_subset(&plain(&parent.capabilities)));
            }
        }
        // store scan oracle for contamination
        let scanned: BTreeSet<AgentId> = state
            .agents()
            .filter(|a| a.memory.segments().iter().any(|s| s.payload.is_some()))
            .map(|a| a.id)
            .collect();
        prop_assert_eq!(contamination_reach(state), scanned);

        let rebuilt = Kernel::replay(k.config().clone(), k.events()).unwrap();
        prop_assert_eq!(&rebuilt, &k);

        // auditing never changes anything
        let snapshot = k.clone();
        let v1 = check_all(k.events(), k.state(), k.workspace(), &k.config().role_map);
        let v2 = check_all(k.events(), k.state(), k.workspace(), &k.config().role_map);
        prop_assert_eq!(v1, v2);
        prop_assert_eq!(&k, &snapshot);
    }

    #[test]
    fn traces_round_trip(ops in prop::collection::vec(op(), 0..30), enforced in any::<bool>()) {
        let mode = if enforced { Mode::Enforced } else { Mode::Permissive };
        let mut k = fresh(mode);
        let mut n = 0;
        for op in &ops {
            apply(&mut k, op, &mut n);
        }
        k.send_message(Principal::User, Principal::Agent(k.root()), "line \"with\" quotes\n").unwrap();
        let violations = check_all(k.events(), k.state(), k.workspace(), &k.config().role_map);
        let text = k.trace("prop", 7).to_jsonl(&violations);
        let parsed = parse_jsonl(&text).unwrap();
        prop_assert!(parsed.hash_matches());
        prop_assert_eq!(parsed.trace.events.as_slice(), k.events());
        prop_assert_eq!(parsed.footer.verdicts, violations);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn runs_are_deterministic(seed in any::<u64>(), which in 0..4usize, enforced in any::<bool>()) {
        let mode = if enforced { Mode::Enforced } else { Mode::Permissive };
        let s = &bundled_scenarios()[which];
        let a = run(s, mode, seed).unwrap();
        let b = run(s, mode, seed).unwrap();
        prop_assert_eq!(a.trace_jsonl(), b.trace_jsonl());
    }
}
