//! Fixtures shared by the benchmarks.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spawnguard_core::registry::tools;
use spawnguard_core::{
    AgentId, Capability, Interaction, Kernel, KernelConfig, Lattice, Lifespan, MemoryMode,
    MemorySegment, MemoryStore, Mode, RevisionEvent, RevisionLog, RevisionOp, Role, RootSpec,
    SegId, SpawnSpec, ToolId,
};

/// A store of `n` segments with uniformly random labels on the default lattice.
pub fn random_store(n: usize, seed: u64) -> MemoryStore {
    let lattice = Lattice::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segs = (0..n).map(|i| MemorySegment {
        id: SegId(i as u64),
        key: format!("k{i}"),
        label: lattice.at(rng.random_range(0..3)).unwrap(),
        content: format!("content {i}"),
        payload: None,
        origin: None,
        created_at: 0,
        revised_at: 0,
    });
    MemoryStore::from_segments(None, segs).unwrap()
}

/// A log of `n` events spread over `segs` segments, about one in ten a revocation.
pub fn random_log(n: usize, segs: u64, seed: u64) -> RevisionLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = RevisionLog::new();
    for t in 1..=n as u64 {
        let op = if rng.random_ratio(1, 10) { RevisionOp::Revoke } else { RevisionOp::Update };
        let seg_id = SegId(rng.random_range(0..segs));
        log.append(RevisionEvent { op, seg_id, t, author: None }).unwrap();
    }
    log
}

const CAPS: [Capability; 3] = [Capability::Spawn, Capability::AccessMemory, Capability::Communicate];

fn config(mode: Mode) -> KernelConfig {
    let mut config = KernelConfig::new(mode);
    config.role_map.insert(
        "lead",
        [tools::READ_SEGMENT, tools::WRITE_SEGMENT, tools::EXEC].map(ToolId::new),
    );
    config.role_map.insert("worker", [tools::READ_SEGMENT, tools::WRITE_SEGMENT].map(ToolId::new));
    config
}

/// A kernel holding a tree of `n` agents. Leads spawn up to `fanout`
/// children each, alternating leads and capability-free workers.
/// The root starts with `memory` seeded segments, inherited in full.
pub fn tree_kernel(mode: Mode, n: usize, fanout: usize, memory: usize) -> Kernel {
    let lattice = Lattice::default();
    let mut k = Kernel::new(
        config(mode),
        RootSpec {
            name: "root".into(),
            role: Role { name: "lead".into(), clearance: lattice.top() },
            capabilities: CAPS.into_iter().collect(),
            lifespan: Lifespan::Persistent,
            interaction: Interaction::SessionBased,
        },
    )
    .unwrap();
    let root = k.root();
    for i in 0..memory {
        k.seed(Some(root), &format!("m{i}"), "x", lattice.at(i % 3).unwrap()).unwrap();
    }
    assert!(fanout >= 2, "workers cannot spawn, so leads need room for both kinds");
    let mut leads: Vec<AgentId> = vec![root];
    for i in 1..n {
        let parent = leads[(i - 1) / fanout];
        let worker = i % 2 == 0;
        let id = k
            .spawn(
                parent,
                SpawnSpec {
                    name: format!("a{i}"),
                    role: if worker {
                        Role { name: "worker".into(), clearance: lattice.at(1).unwrap() }
                    } else {
                        Role { name: "lead".into(), clearance: lattice.top() }
                    },
                    capabilities: if worker { BTreeSet::new() } else { CAPS.into_iter().collect() },
                    memory_mode: MemoryMode::InheritFull,
                    selector: None,
                    lifespan: Lifespan::Persistent,
                    interaction: Interaction::TaskOriented,
                },
            )
            .unwrap();
        if !worker {
            leads.push(id);
        }
    }
    k
}
