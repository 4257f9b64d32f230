use std::path::Path;
use std::process::{Command, Output};

use spawnguard_core::engine::bundled_scenarios;

fn spawnguard(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spawnguard"))
        .args(args)
        .env("SPAWNGUARD_OUT_DIR", out_dir)
        .current_dir(out_dir)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn list_shows_the_bundled_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let o = spawnguard(&["list"], dir.path());
    assert_eq!(code(&o), 0);
    let listed: Vec<String> = stdout(&o)
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_owned())
        .collect();
    let bundled: Vec<String> = bundled_scenarios().iter().map(|s| s.name().to_owned()).collect();
    assert_eq!(listed.len(), 4);
    assert_eq!(listed, bundled);
}

#[test]
fn run_writes_outputs_under_the_env_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested");
    std::fs::create_dir_all(&out).unwrap();
    for s in bundled_scenarios() {
        for mode in ["permissive", "enforced"] {
            let o = spawnguard(&["run", s.name(), "--mode", mode], &out);
            assert_eq!(code(&o), 0, "{} {mode}: {}", s.name(), stderr(&o));
            let trace = out.join(format!("{}-{mode}-0.trace.jsonl", s.name()));
            assert!(trace.exists(), "{}", trace.display());
            assert!(out.join(format!("{}-{mode}-0.report.txt", s.name())).exists());
            assert!(stdout(&o).contains("expectation: matched"));

            let r = spawnguard(&["replay", trace.to_str().unwrap()], dir.path());
            assert_eq!(code(&r), 0, "{}", stdout(&r));
        }
    }
}

#[test]
fn explicit_paths_and_structured_reports() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let report = dir.path().join("r.json");
    let o = spawnguard(
        &[
            "run",
            "access_control",
            "--mode",
            "enforced",
            "--seed",
            "9",
            "--format",
            "structured",
            "--trace-out",
            trace.to_str().unwrap(),
            "--report-out",
            report.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["format"], "spawnguard-report");
    assert_eq!(json["seed"], 9);
    assert_eq!(json["defense_counts"]["denial"], 3);
    assert_eq!(json, serde_json::from_str::<serde_json::Value>(&stdout(&o)).unwrap());
    assert!(trace.exists());
}

const MINIMAL: &str = r#"
[scenario]
name = "mini"

[roles.boss]
clearance = "privileged"
tools = ["write_segment"]

[agents.main]
role = "boss"
capabilities = ["spawn"]
"#;

#[test]
fn malformed_scenarios_exit_1_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, MINIMAL.replace("\"spawn\"", "\"spawn\", \"teleport\"")).unwrap();
    for cmd in ["run", "validate"] {
        let o = spawnguard(&[cmd, path.to_str().unwrap()], dir.path());
        assert_eq!(code(&o), 1);
        assert!(stderr(&o).contains("agents.main.capabilities[1]"), "{}", stderr(&o));
    }
    std::fs::write(&path, format!("{MINIMAL}\nbogus = 1\n")).unwrap();
    let o = spawnguard(&["validate", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&spawnguard(&["run", "no_such_scenario"], dir.path())), 1);
    assert_eq!(code(&spawnguard(&["run", "inheritance", "--mode", "strict"], dir.path())), 1);
    assert_eq!(code(&spawnguard(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&spawnguard(&["replay", "missing.jsonl"], dir.path())), 1);
    assert_eq!(code(&spawnguard(&["--help"], dir.path())), 0);
}

#[test]
fn validate_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let o = spawnguard(&["validate", "sibling_termination"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("ok: sibling_termination"));
}

#[test]
fn expectation_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.toml");
    let text = format!(
        "{MINIMAL}\n[[behaviors.main]]\nop = \"write\"\nkey = \"k\"\ncontent = \"v\"\n\n[expected.permissive]\nworkspace = {{ k = \"other\" }}\n"
    );
    std::fs::write(&path, text).unwrap();
    let o = spawnguard(&["run", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("expectation: MISMATCH"), "{}", stdout(&o));
    assert!(stdout(&o).contains("workspace.k: expected \"other\", observed \"v\""));
    // no expectation for enforced mode: a clean run exits 0
    let o = spawnguard(&["run", path.to_str().unwrap(), "--mode", "enforced"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn deadlock_exits_2_with_a_replayable_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.toml");
    let text = r#"
[scenario]
name = "stuck"

[roles.boss]
clearance = "privileged"
tools = ["write_segment"]

[agents.main]
role = "boss"
capabilities = ["spawn"]

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

[[behaviors.a]]
op = "write"
key = "k"
content = "v"
"#;
    std::fs::write(&path, text).unwrap();
    let trace = dir.path().join("partial.jsonl");
    let o = spawnguard(
        &["run", path.to_str().unwrap(), "--mode", "enforced", "--trace-out", trace.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("deadlock"), "{}", stderr(&o));
    let r = spawnguard(&["replay", trace.to_str().unwrap()], dir.path());
    assert_eq!(code(&r), 0, "{}", stdout(&r));
}

#[test]
fn replay_rejects_garbage_and_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("g.jsonl");
    std::fs::write(&garbage, "hello\n").unwrap();
    assert_eq!(code(&spawnguard(&["replay", garbage.to_str().unwrap()], dir.path())), 2);

    let trace = dir.path().join("t.jsonl");
    let o = spawnguard(&["run", "memory_divergence", "--trace-out", trace.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&trace).unwrap();
    std::fs::write(&trace, text.replacen("VERIFIED_SAFE", "VERIFIED_SAFF", 1)).unwrap();
    let r = spawnguard(&["replay", trace.to_str().unwrap()], dir.path());
    assert_eq!(code(&r), 2);
    assert!(stdout(&r).contains("hash      MISMATCH"), "{}", stdout(&r));
}

#[test]
fn documented_example_runs_and_matches() {
    let doc = include_str!("../../../docs/FORMATS.md");
    let start = doc.find("```toml\n").unwrap() + "```toml\n".len();
    let end = start + doc[start..].find("```").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("example.toml");
    std::fs::write(&path, &doc[start..end]).unwrap();
    let o = spawnguard(&["run", path.to_str().unwrap(), "--mode", "enforced"], dir.path());
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("expectation: matched"));
}
