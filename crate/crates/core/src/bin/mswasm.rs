use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use mswasm::bench::bench_suite;
use mswasm::compiler::{compile_src, CompileOptions};
use mswasm::conformance::campaign::{fuzz_attackers, fuzz_modules, fuzz_sources, CampaignReport};
use mswasm::conformance::{diff_run, Counterexample, DiffConfig, Relation};
use mswasm::interp::{run, trace_to_jsonl, Backend, Outcome, RunConfig, DEFAULT_STEP_BUDGET};
use mswasm::minic::{parse_src, print_src, src_typecheck, SrcError};
use mswasm::monitor::{abs_from_jsonl, check_trace};
use mswasm::tracerel::{check_mswasm_ms, MsVerdict};
use mswasm::{parse_module, print_module, typecheck_module, ModuleDef};

const OK: u8 = 0;
const USAGE: u8 = 2;
const TRAP: u8 = 10;
const TYPE_ERROR: u8 = 11;
const PARSE_ERROR: u8 = 12;
const VIOLATION: u8 = 13;
const BUDGET: u8 = 14;
const DIVERGED: u8 = 15;

/// Memory-safe WebAssembly toolkit.
///
/// Files ending in `.uc` are C-subset sources; anything else is read as
/// bytecode text. Commands that execute code compile sources first.
#[derive(Parser)]
#[command(name = "mswasm", version)]
struct Cli {
    /// Print machine-readable JSON reports.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct Exec {
    #[arg(long, default_value = "tagged")]
    backend: Backend,
    /// Segment memory size in bytes, overriding the module's.
    #[arg(long)]
    segment_size: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_STEP_BUDGET)]
    budget: u64,
    /// Write the event trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a file and print it back in canonical form.
    Parse { file: PathBuf },
    /// Parse and typecheck a file.
    Typecheck { file: PathBuf },
    /// Run a program.
    Run {
        file: PathBuf,
        #[command(flatten)]
        exec: Exec,
    },
    /// Compile a source program to bytecode text.
    Compile {
        file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = mswasm::compiler::DEFAULT_SEGMENT_SIZE)]
        segment_size: u32,
    },
    /// Run a program and check its trace with the safety monitor.
    Check {
        file: PathBuf,
        #[command(flatten)]
        exec: Exec,
    },
    /// Check an abstract event trace (JSON lines).
    Monitor { trace: PathBuf },
    /// Run a source program and its compiled code side by side.
    Diff {
        file: PathBuf,
        /// Where to write a counterexample bundle if the runs diverge.
        #[arg(long, default_value = "counterexamples")]
        out: PathBuf,
    },
    /// Generate random programs and check them.
    Fuzz {
        #[arg(long, default_value_t = 1000)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fuzz victims with imports against random attacker contexts.
        #[arg(long)]
        attacker: bool,
        /// Attacker contexts per victim.
        #[arg(long, default_value_t = 5)]
        contexts: u64,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "counterexamples")]
        out: PathBuf,
    },
    /// Time a fixed micro-suite on both backends.
    Bench {
        #[arg(long, default_value_t = 20_000)]
        iters: u32,
    },
}

struct Failure(u8, String);

type Res = Result<u8, Failure>;

fn fail(code: u8, msg: impl std::fmt::Display) -> Failure {
    Failure(code, msg.to_string())
}

fn is_src(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "uc")
}

fn read(p: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(p).map_err(|e| fail(USAGE, format!("{}: {e}", p.display())))
}

fn src_error(e: SrcError) -> Failure {
    match e {
        SrcError::Parse(_) => fail(PARSE_ERROR, e),
        SrcError::Type(_) => fail(TYPE_ERROR, e),
    }
}

/// The bytecode for `p`, compiling sources.
fn load_module(p: &Path, segment_size: Option<u32>) -> Result<ModuleDef, Failure> {
    let text = read(p)?;
    if is_src(p) {
        let opts = CompileOptions {
            segment_size: segment_size.unwrap_or(mswasm::compiler::DEFAULT_SEGMENT_SIZE),
        };
        compile_src(&text, &opts).map(|(_, m)| m).map_err(src_error)
    } else {
        parse_module(&text).map_err(|e| fail(PARSE_ERROR, e))
    }
}

fn outcome_code(o: &Outcome) -> u8 {
    match o {
        Outcome::Returned(_) => OK,
        Outcome::Trapped(_) => TRAP,
        Outcome::Budget => BUDGET,
    }
}

fn execute(file: &Path, exec: &Exec) -> Result<mswasm::interp::RunResult, Failure> {
    let m = load_module(file, exec.segment_size)?;
    let wt = typecheck_module(&m).map_err(|e| fail(TYPE_ERROR, e))?;
    let cfg = RunConfig {
        backend: exec.backend,
        segment_size: exec.segment_size,
        step_budget: exec.budget,
        ..RunConfig::default()
    };
    let r = run(wt, &cfg).map_err(|e| fail(TYPE_ERROR, e))?;
    if let Some(t) = &exec.trace {
        std::fs::write(t, trace_to_jsonl(&r.trace)).map_err(|e| fail(USAGE, e))?;
    }
    Ok(r)
}

fn print_campaign(json: bool, what: &str, r: &CampaignReport) {
    if json {
        println!("{}", json!({ "campaign": what, "report": r }));
        return;
    }
    println!(
        "{what}: {} cases, {} returned, {} trapped, {} out of budget, {} unsupported, {} failures",
        r.cases, r.outcomes.returned, r.outcomes.trapped, r.outcomes.budget, r.unsupported,
        r.failures.len()
    );
    for f in &r.failures {
        let saved = f.saved.as_ref().map(|p| format!(" ({})", p.display())).unwrap_or_default();
        println!("  case {} seed {:#x}: {}{saved}", f.case, f.seed, f.reason);
    }
}

fn dispatch(cli: &Cli) -> Res {
    let json = cli.json;
    match &cli.cmd {
        Cmd::Parse { file } => {
            let text = read(file)?;
            if is_src(file) {
                let m = parse_src(&text).map_err(|e| fail(PARSE_ERROR, e))?;
                print!("{}", print_src(&m));
            } else {
                let m = parse_module(&text).map_err(|e| fail(PARSE_ERROR, e))?;
                println!("{}", print_module(&m));
            }
            Ok(OK)
        }
        Cmd::Typecheck { file } => {
            let text = read(file)?;
            if is_src(file) {
                let m = parse_src(&text).map_err(|e| fail(PARSE_ERROR, e))?;
                src_typecheck(&m).map_err(|e| fail(TYPE_ERROR, e))?;
            } else {
                let m = parse_module(&text).map_err(|e| fail(PARSE_ERROR, e))?;
                typecheck_module(&m).map_err(|e| fail(TYPE_ERROR, e))?;
            }
            if json {
                println!("{}", json!({ "typecheck": "ok" }));
            } else {
                println!("ok");
            }
            Ok(OK)
        }
        Cmd::Run { file, exec } => {
            let r = execute(file, exec)?;
            if json {
                println!("{}", json!({ "outcome": r.outcome, "steps": r.steps, "events": r.trace.len() }));
            } else {
                match &r.outcome {
                    Outcome::Returned(vs) => {
                        let vs: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
                        println!("returned [{}]", vs.join(", "));
                    }
                    Outcome::Trapped(t) => println!("trap: {t}"),
                    Outcome::Budget => println!("step budget exhausted"),
                }
            }
            Ok(outcome_code(&r.outcome))
        }
        Cmd::Compile { file, output, segment_size } => {
            let text = read(file)?;
            let opts = CompileOptions { segment_size: *segment_size };
            let (_, m) = compile_src(&text, &opts).map_err(src_error)?;
            let out = print_module(&m) + "\n";
            match output {
                Some(p) => std::fs::write(p, out).map_err(|e| fail(USAGE, e))?,
                None => print!("{out}"),
            }
            Ok(OK)
        }
        Cmd::Check { file, exec } => {
            let r = execute(file, exec)?;
            let v = check_mswasm_ms(&r.trace);
            if json {
                println!("{}", json!({ "verdict": v, "outcome": r.outcome, "events": r.trace.len() }));
            } else {
                match &v {
                    MsVerdict::Safe => println!("safe ({} events)", r.trace.len()),
                    v => println!("unsafe: {}", serde_json::to_string(v).unwrap_or_default()),
                }
            }
            Ok(if v.is_safe() { OK } else { VIOLATION })
        }
        Cmd::Monitor { trace } => {
            let events = abs_from_jsonl(&read(trace)?).map_err(|e| fail(PARSE_ERROR, e))?;
            let v = check_trace(&events);
            if json {
                let report = match &v {
                    Ok(()) => json!({ "verdict": "safe", "events": events.len() }),
                    Err(e) => json!({ "verdict": "violation", "violation": e }),
                };
                println!("{report}");
            } else {
                match &v {
                    Ok(()) => println!("safe ({} events)", events.len()),
                    Err(e) => println!("violation: {e}"),
                }
            }
            Ok(if v.is_ok() { OK } else { VIOLATION })
        }
        Cmd::Diff { file, out } => {
            let text = read(file)?;
            let cfg = DiffConfig::default();
            let (m, compiled) = compile_src(&text, &cfg.compile).map_err(src_error)?;
            let report = diff_run(&m, &cfg);
            let diverged = report.is_diverged();
            let note = match &report.relation {
                Relation::Unsupported { reason } => Some(reason.clone()),
                _ => None,
            };
            if json {
                println!("{}", serde_json::to_string(&report).unwrap_or_default());
            } else {
                println!("relation: {}", serde_json::to_string(&report.relation).unwrap_or_default());
                println!("source: {}", serde_json::to_string(&report.src_ms).unwrap_or_default());
                println!("target: {}", serde_json::to_string(&report.tgt_ms).unwrap_or_default());
                println!(
                    "events: {} source, {} target",
                    report.src_trace.len(),
                    report.tgt_trace.len()
                );
            }
            if diverged {
                let name = file.file_stem().and_then(|s| s.to_str()).unwrap_or("diff");
                let path = Counterexample::new(text, &compiled, report)
                    .save(out, name)
                    .map_err(|e| fail(USAGE, e))?;
                eprintln!("counterexample written to {}", path.display());
                return Ok(DIVERGED);
            }
            if let Some(reason) = note {
                eprintln!("note: {reason}");
            }
            Ok(OK)
        }
        Cmd::Fuzz { n, seed, attacker, contexts, threads, out } => {
            let go = || {
                if *attacker {
                    let r = fuzz_attackers(*n, *contexts, *seed, Some(out));
                    print_campaign(json, "attacker", &r);
                    if r.ok() { OK } else { VIOLATION }
                } else {
                    let a = fuzz_modules(*n, *seed, Some(out));
                    print_campaign(json, "modules", &a);
                    let b = fuzz_sources(*n, *seed, Some(out));
                    print_campaign(json, "sources", &b);
                    if !b.ok() {
                        DIVERGED
                    } else if !a.ok() {
                        VIOLATION
                    } else {
                        OK
                    }
                }
            };
            match threads {
                Some(t) => rayon::ThreadPoolBuilder::new()
                    .num_threads(*t)
                    .build()
                    .map_err(|e| fail(USAGE, e))
                    .map(|p| p.install(go)),
                None => Ok(go()),
            }
        }
        Cmd::Bench { iters } => {
            let results = bench_suite(*iters);
            if json {
                println!("{}", serde_json::to_string(&results).unwrap_or_default());
            } else {
                for r in &results {
                    println!(
                        "{:<24} {:<6} {:>12.0} ops/s  ({} ops in {:.3}s)",
                        r.name,
                        format!("{:?}", r.backend).to_lowercase(),
                        r.ops_per_sec,
                        r.ops,
                        r.secs
                    );
                }
            }
            Ok(OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            if cli.json {
                println!("{}", json!({ "error": msg, "exit": code }));
            }
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
