//! `spawnguard`: run, list, validate and replay simulator scenarios.
//!
//! Exit codes: 0 outcome matched (or replay verified), 1 usage or parse
//! error, 2 outcome mismatch, run failure or tampered trace.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use spawnguard_core::engine::bundled;
use spawnguard_core::checker::check_all;
use spawnguard_core::engine::{run, RunError, Scenario};
use spawnguard_core::replay;
use spawnguard_core::trace::parse_jsonl;
use spawnguard_core::Mode;

const OUT_DIR_ENV: &str = "SPAWNGUARD_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "spawnguard-out";

#[derive(Parser)]
#[command(name = "spawnguard", version, about = "Security kernel simulator for multi-agent networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or bundled scenario.
    Run(RunArgs),
    /// List the bundled scenarios.
    List,
    /// Re-verify a trace: recompute verdicts and check its hash.
    Replay {
        trace: PathBuf,
    },
    /// Parse and validate a scenario without running it.
    Validate {
        scenario: String,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Path to a scenario file, or the name of a bundled scenario.
    scenario: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Permissive)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace output path [default: $SPAWNGUARD_OUT_DIR/<scenario>-<mode>-<seed>.trace.jsonl]
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Report output path [default: $SPAWNGUARD_OUT_DIR/<scenario>-<mode>-<seed>.report.{txt,json}]
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Directory for default output paths.
    #[arg(long, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Permissive,
    Enforced,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Permissive => Mode::Permissive,
            ModeArg::Enforced => Mode::Enforced,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Structured,
}

/// An error carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn mismatch(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::List => cmd_list(),
        Command::Replay { trace } => cmd_replay(&trace),
        Command::Validate { scenario } => cmd_validate(&scenario),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// Loads a scenario from a path, falling back to a bundled name.
fn load(spec: &str) -> Result<Scenario, Failure> {
    let path = Path::new(spec);
    let (origin, text) = if path.exists() {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(usage)?;
        (path.display().to_string(), text)
    } else if let Some(src) = bundled::bundled_source(spec) {
        (format!("bundled:{spec}"), src.to_owned())
    } else {
        return Err(usage(anyhow::anyhow!(
            "{spec}: no such file or bundled scenario"
        )));
    };
    Scenario::from_toml(&text)
        .with_context(|| format!("in {origin}"))
        .map_err(usage)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(usage)?;
    }
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(usage)
}

fn cmd_run(args: RunArgs) -> Result<u8, Failure> {
    let scenario = load(&args.scenario)?;
    let mode: Mode = args.mode.into();
    let stem = format!("{}-{mode}-{}", scenario.name(), args.seed);
    let out = match run(&scenario, mode, args.seed) {
        Ok(out) => out,
        Err(e) => {
            if let RunError::DeadlockDetected { kernel, .. } = &e {
                let path = args
                    .trace_out
                    .unwrap_or_else(|| args.out_dir.join(format!("{stem}.trace.jsonl")));
                let k = kernel.as_ref();
                let verdicts = check_all(k.events(), k.state(), k.workspace(), &k.config().role_map);
                write_file(&path, &k.trace(scenario.name(), args.seed).to_jsonl(&verdicts))?;
                eprintln!("partial trace {}", path.display());
            }
            return Err(mismatch(anyhow::Error::new(e).context(format!(
                "running {} ({mode}, seed {})",
                scenario.name(),
                args.seed
            ))));
        }
    };
    let ext = match args.format {
        Format::Text => "txt",
        Format::Structured => "json",
    };
    let trace_path = args
        .trace_out
        .unwrap_or_else(|| args.out_dir.join(format!("{stem}.trace.jsonl")));
    let report_path = args
        .report_out
        .unwrap_or_else(|| args.out_dir.join(format!("{stem}.report.{ext}")));
    let rendered = match args.format {
        Format::Text => out.report.to_text(),
        Format::Structured => out.report.to_json() + "\n",
    };
    write_file(&trace_path, &out.trace_jsonl())?;
    write_file(&report_path, &rendered)?;
    print!("{rendered}");
    if args.format == Format::Text {
        println!("trace  {}", trace_path.display());
        println!("report {}", report_path.display());
    }
    Ok(match out.report.matched() {
        Some(false) => 2,
        _ => 0,
    })
}

fn cmd_list() -> Result<u8, Failure> {
    for s in bundled::bundled_scenarios() {
        println!("{:<22}{}", s.name(), s.scenario.summary);
    }
    Ok(0)
}

fn cmd_validate(spec: &str) -> Result<u8, Failure> {
    let s = load(spec)?;
    let steps: usize = s
        .behaviors
        .values()
        .flatten()
        .map(|st| st.expand().len())
        .sum();
    println!(
        "ok: {} ({} roles, {} agents, {} steps)",
        s.name(),
        s.roles.len(),
        s.agents.len(),
        steps
    );
    Ok(0)
}

fn cmd_replay(path: &Path) -> Result<u8, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)?;
    let parsed = parse_jsonl(&text)
        .with_context(|| format!("corrupt trace {}", path.display()))
        .map_err(mismatch)?;
    let v = replay::verify(&parsed);
    let h = &parsed.trace.header;
    println!(
        "trace {} ({}, seed {}): {} events",
        h.scenario, h.mode, h.seed, v.events
    );
    println!(
        "hash      {}",
        if v.hash_matches { "ok" } else { "MISMATCH" }
    );
    if let Some(e) = &v.rebuild_error {
        println!("rebuild   FAILED: {e}");
    }
    println!(
        "verdicts  {} ({} recomputed, {} stored)",
        if v.verdicts_match { "ok" } else { "MISMATCH" },
        v.recomputed.len(),
        parsed.footer.verdicts.len()
    );
    Ok(if v.ok() { 0 } else { 2 })
}
