use spawnguard_core::engine::{bundled_scenarios, run, RunError, Scenario, ScenarioError, Step};
use spawnguard_core::trace::{EventBody, IgnoreReason, TerminationStatus};
use spawnguard_core::{DefenseKind, Mode};

const BASE: &str = r#"
[scenario]
name = "t"

[roles.boss]
clearance = "privileged"
tools = ["read_segment", "write_segment"]

[agents.main]
role = "boss"
capabilities = ["spawn", "access-memory", "communicate", "user-interact"]
interaction = "session-based"
"#;

fn scenario(extra: &str) -> Scenario {
    Scenario::from_toml(&format!("{BASE}{extra}")).unwrap()
}

fn field_of(extra: &str) -> String {
    match Scenario::from_toml(&format!("{BASE}{extra}")) {
        Err(ScenarioError::Invalid { field, .. }) => field,
        other => panic!("expected a field diagnostic, got {other:?}"),
    }
}

#[test]
fn validation_names_the_offending_field() {
    let cases = [
        ("[agents.kid]\nparent = \"main\"\nrole = \"ghost\"\n", "agents.kid.role"),
        ("[roles.x]\nclearance = \"secret\"\n", "roles.x.clearance"),
        ("[roles.x]\nclearance = \"public\"\ntools = [\"teleport\"]\n", "roles.x.tools"),
        ("[agents.other]\nrole = \"boss\"\n", "agents"),
        ("[agents.kid]\nparent = \"main\"\nrole = \"boss\"\n", "agents.kid"),
        ("[agents.kid]\nparent = \"nobody\"\nrole = \"boss\"\n", "agents.kid.parent"),
        ("[[behaviors.ghost]]\nop = \"read\"\nkey = \"k\"\n", "behaviors.ghost"),
        ("[[behaviors.main]]\nop = \"invoke\"\ntool = \"teleport\"\n", "behaviors.main[0].tool"),
        ("[[behaviors.main]]\nop = \"inject\"\ntarget = \"main\"\nkey = \"k\"\ncontent = \"c\"\n", "behaviors.main[0]"),
        ("[[behaviors.user]]\nop = \"read\"\nkey = \"k\"\n", "behaviors.user[0]"),
        ("[[behaviors.main]]\nop = \"repeat\"\ntimes = 0\nstep = { op = \"read\", key = \"k\" }\n", "behaviors.main[0].times"),
        ("[schedule]\norder = [\"ghost\"]\n", "schedule.order[0]"),
        ("[expected.enforced]\nviolations = { bad-kind = 1 }\n", "expected.enforced.violations"),
        ("[[workspace]]\nkey = \"a\"\ncontent = \"\"\n[[workspace]]\nkey = \"a\"\ncontent = \"\"\n", "workspace[1].key"),
    ];
    for (extra, field) in cases {
        assert_eq!(field_of(extra), field, "for:\n{extra}");
    }
}

#[test]
fn capability_typo_is_indexed() {
    let text = BASE.replace("\"user-interact\"]", "\"user-interact\", \"flyy\"]");
    match Scenario::from_toml(&text) {
        Err(ScenarioError::Invalid { field, .. }) => assert_eq!(field, "agents.main.capabilities[4]"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_keys_are_parse_errors() {
    let err = Scenario::from_toml(&format!("{BASE}\n[agents.main.extra]\nx = 1\n")).unwrap_err();
    assert!(matches!(err, ScenarioError::Parse(_)));
    assert!(matches!(Scenario::from_toml("not toml ["), Err(ScenarioError::Parse(_))));
}

const SIBLINGS: &str = r#"
[agents.a]
parent = "main"
role = "boss"

[agents.b]
parent = "main"
role = "boss"

[[behaviors.main]]
op = "spawn"
agent = "a"

[[behaviors.main]]
op = "spawn"
agent = "b"

[[behaviors.a]]
op = "terminate"
target = "b"

[schedule]
order = ["main", "main", "a"]
"#;

#[test]
fn unresolved_suspension_is_a_deadlock() {
    // with nothing left to do, a blocked requester is not stuck
    assert!(run(&scenario(SIBLINGS), Mode::Enforced, 0).is_ok());
    let s = scenario(&format!(
        "{SIBLINGS}\n[[behaviors.a]]\nop = \"write\"\nkey = \"x\"\ncontent = \"y\"\n"
    ));
    let err = run(&s, Mode::Enforced, 0).unwrap_err();
    let RunError::DeadlockDetected { at, kernel, detail } = err else {
        panic!("expected deadlock, got {err}");
    };
    assert_eq!(at, kernel.clock());
    assert!(detail.contains("a blocked on a suspended termination"), "{detail}");
    let last = &kernel.events().last().unwrap().body;
    assert!(matches!(
        last,
        EventBody::Terminate { outcome: TerminationStatus::Suspended { .. }, .. }
    ));
    // permissive mode just executes the kill
    let out = run(&s, Mode::Permissive, 0).unwrap();
    assert!(!out.kernel.state().agent(out.names["b"]).unwrap().alive);
}

#[test]
fn resolve_step_unblocks_the_requester() {
    let extra = format!(
        "{SIBLINGS}\n[[behaviors.main]]\nop = \"resolve\"\ntarget = \"b\"\napprove = true\n"
    );
    let out = run(&scenario(&extra), Mode::Enforced, 3).unwrap();
    assert!(!out.kernel.state().agent(out.names["b"]).unwrap().alive);
    assert!(out.violations.is_empty());
    assert_eq!(out.report.defense_count(DefenseKind::Suspension), 1);
}

#[test]
fn order_entry_must_be_runnable() {
    let extra = "[agents.kid]\nparent = \"main\"\nrole = \"boss\"\n[[behaviors.main]]\nop = \"spawn\"\nagent = \"kid\"\n[[behaviors.kid]]\nop = \"read\"\nkey = \"x\"\n[schedule]\norder = [\"kid\"]\n";
    let err = run(&scenario(extra), Mode::Permissive, 0).unwrap_err();
    assert!(matches!(err, RunError::NotRunnable { index: 0, ref actor } if actor == "kid"));
}

#[test]
fn step_limit_stops_runaway_scripts() {
    let extra = "[[behaviors.main]]\nop = \"repeat\"\ntimes = 50\nstep = { op = \"write\", key = \"k\", content = \"v{i}\" }\n[schedule]\nmax_steps = 10\n";
    assert!(matches!(
        run(&scenario(extra), Mode::Permissive, 0),
        Err(RunError::StepLimit(10))
    ));
}

#[test]
fn repeat_substitutes_the_iteration() {
    let extra = "[[behaviors.main]]\nop = \"repeat\"\ntimes = 3\nstep = { op = \"write\", key = \"k\", content = \"v{i}\" }\n";
    let s = scenario(extra);
    let expanded = s.behaviors["main"][0].expand();
    assert_eq!(expanded.len(), 3);
    assert_eq!(
        expanded[2],
        Step::Write { key: "k".into(), content: "v3".into(), label: None }
    );
    let out = run(&s, Mode::Enforced, 0).unwrap();
    assert_eq!(out.kernel.workspace().value("k"), Some("v3"));
}

/// A rule held in main's memory is inherited by `kid`, then revoked by main
/// before the user's trigger message arrives.
const REVOKED_RULE: &str = r#"
[[agents.main.memory]]
key = "rule"
content = "on go: read secret"

[agents.kid]
parent = "main"
role = "boss"
capabilities = ["user-interact"]
memory_mode = "inherit-full"

[[workspace]]
key = "secret"
content = "s3cr3t"

[[behaviors.main]]
op = "spawn"
agent = "kid"

[[behaviors.main]]
op = "revoke"
key = "rule"

[[behaviors.user]]
op = "send"
to = "kid"
text = "go"

[schedule]
order = ["main", "main", "user"]
"#;

#[test]
fn revoked_rules_are_inert_only_when_enforced() {
    let s = scenario(REVOKED_RULE);
    let reads = |mode| {
        let out = run(&s, mode, 0).unwrap();
        let n = out
            .kernel
            .events()
            .iter()
            .filter(|e| matches!(&e.body, EventBody::Read { key, .. } if key == "secret"))
            .count();
        (n, out)
    };
    let (n, _) = reads(Mode::Permissive);
    assert_eq!(n, 1);
    let (n, out) = reads(Mode::Enforced);
    assert_eq!(n, 0);
    assert!(out.kernel.events().iter().any(|e| matches!(
        e.body,
        EventBody::Ignored { reason: IgnoreReason::RevokedRule, .. }
    )));
    assert_eq!(out.report.defense_count(DefenseKind::RevokedContext), 1);
}

fn commit_scenario(rewrite: &str) -> Scenario {
    scenario(&format!(
        r#"
[roles.jester]
clearance = "public"
tools = ["write_segment"]

[agents.clown]
parent = "main"
role = "jester"

[[workspace]]
key = "state"
content = "SAFE"

[[behaviors.main]]
op = "spawn"
agent = "clown"

[[behaviors.main]]
op = "read"
key = "state"

[[behaviors.clown]]
op = "write"
key = "state"
content = "{rewrite}"

[[behaviors.main]]
op = "commit"
key = "verdict"
value = "OK"
source = "state"
expect = "SAFE"

[schedule]
order = ["main", "main", "clown", "main"]
"#
    ))
}

#[test]
fn blocked_commit_retries_only_on_expected_content() {
    let out = run(&commit_scenario("SAFE"), Mode::Enforced, 0).unwrap();
    assert_eq!(out.kernel.workspace().value("verdict"), Some("OK"));
    assert_eq!(out.report.defense_count(DefenseKind::StaleCommit), 1);

    let out = run(&commit_scenario("BROKEN"), Mode::Enforced, 0).unwrap();
    assert_eq!(out.kernel.workspace().value("verdict"), None);
    assert!(out.kernel.events().iter().any(|e| matches!(
        e.body,
        EventBody::Ignored { reason: IgnoreReason::SourceChanged, .. }
    )));

    let out = run(&commit_scenario("BROKEN"), Mode::Permissive, 0).unwrap();
    assert_eq!(out.kernel.workspace().value("verdict"), Some("OK"));
}

#[test]
fn toml_round_trip() {
    for s in bundled_scenarios() {
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }
}

#[test]
fn seeds_only_reorder_rounds() {
    let s = scenario(&format!(
        "{SIBLINGS}\n[[behaviors.main]]\nop = \"resolve\"\ntarget = \"b\"\napprove = true\n[[behaviors.b]]\nop = \"write\"\nkey = \"x\"\ncontent = \"y\"\n"
    ));
    let outs: Vec<_> = (0..8).map(|seed| run(&s, Mode::Enforced, seed).unwrap()).collect();
    for o in &outs {
        assert_eq!(o.kernel.events()[..4], outs[0].kernel.events()[..4]);
    }
}
