use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use flexlane::commands::{self, CliError, ProviderKind, RecordError};
use flexlane::gateway::{self, Gateway};
use flexlane_core::autoir::parse_autoir;
use flexlane_core::registry::{validate_program, ParamRegistry};
use flexlane_core::sim::Scenario;

#[derive(Parser)]
#[command(name = "flexlane", version, about = "Instructable driving stack: scenario runs, evaluation, benchmarks, live gateway")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario to its horizon, optionally with one spoken instruction.
    Run {
        /// Builtin scenario name or path to a scenario JSON file.
        #[arg(long)]
        scenario: String,
        #[arg(long, conflicts_with = "phrasing")]
        instruction: Option<String>,
        /// Use the scenario's N-th scripted phrasing (0-based).
        #[arg(long)]
        phrasing: Option<usize>,
        #[arg(long, value_enum, default_value = "mock")]
        provider: ProviderKind,
        /// Write the full transcript as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score translation against a golden dataset.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Directory of `.kb` entries, or one document to chunk.
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mock")]
        provider: ProviderKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time rule matching over a scaled rule base.
    Bench {
        #[arg(long, default_value_t = 50)]
        rules: usize,
        #[arg(long, default_value_t = 100_000)]
        rounds: usize,
    },
    /// Draft a rule from the status seen at a scenario's injection point.
    RecordRule {
        #[arg(long)]
        scenario: String,
        /// AutoIR program naming the parameter the rule gates.
        #[arg(long)]
        autoir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Live session with the HTTP and WebSocket gateway.
    Serve {
        #[arg(long, default_value = "pedestrian_margin")]
        scenario: String,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value_t = 100)]
        tick_ms: u64,
        #[arg(long, value_enum, default_value = "mock")]
        provider: ProviderKind,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn write_out(path: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| input(format!("{}: {e}", p.display()))),
        None => Ok(()),
    }
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Run { scenario, instruction, phrasing, provider, out } => {
            let scenario = Scenario::load(&scenario).map_err(input)?;
            let text = match (instruction, phrasing) {
                (Some(t), _) => Some(t),
                (None, Some(i)) => {
                    let script = scenario.instruction.as_ref().ok_or_else(|| input("scenario has no scripted phrasings"))?;
                    Some(script.phrasings.get(i).cloned().ok_or_else(|| input(format!("no phrasing {i}")))?)
                }
                (None, None) => None,
            };
            let translator = Arc::new(commands::shipped_translator(commands::make_provider(provider)?));
            let t = commands::cmd_run(scenario, text.as_deref(), translator)?;
            write_out(&out, &serde_json::to_string_pretty(&t).expect("transcript serializes"))?;
            if let Some(trace) = &t.trace {
                for e in &trace.events {
                    println!("[{:>6.1}s] stage {} {}", e.t, e.stage, serde_json::to_string(&e.kind).unwrap_or_default());
                }
            }
            for o in &t.outcome {
                println!("{} {} ({})", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            if t.passed {
                Ok(())
            } else {
                Err(CliError::Failure("scenario predicates not met".into()))
            }
        }
        Cmd::Eval { dataset, kb, provider, out } => {
            let dataset = dataset.unwrap_or_else(commands::default_dataset);
            let kb = kb.unwrap_or_else(commands::default_kb);
            let r = commands::cmd_eval(&dataset, &kb, commands::make_provider(provider)?)?;
            println!("items      {} ({} relevant, {} irrelevant)", r.size, r.relevant_items, r.irrelevant_items);
            println!("module     {:6.2}%", r.module_select);
            println!("node       {:6.2}%", r.node_select);
            println!("param      {:6.2}%", r.param_select);
            println!("action     {:6.2}%", r.config_action);
            println!("overall    {:6.2}%", r.overall);
            println!("relevance  {:6.2}%", r.relevance);
            for m in &r.misses {
                println!("miss: {m}");
            }
            write_out(&out, &serde_json::to_string_pretty(&r).expect("report serializes"))
        }
        Cmd::Bench { rules, rounds } => {
            let s = commands::cmd_bench(rules, rounds)?;
            println!(
                "rules={} rounds={} hits={} max={:.4}ms mean={:.6}ms p99={:.6}ms",
                s.rules, s.rounds, s.hits, s.max_ms, s.mean_ms, s.p99_ms
            );
            Ok(())
        }
        Cmd::RecordRule { scenario, autoir, out } => {
            let scenario = Scenario::load(&scenario).map_err(input)?;
            let text = std::fs::read_to_string(&autoir).map_err(|e| input(format!("{}: {e}", autoir.display())))?;
            let program = parse_autoir(&text).map_err(input)?;
            let report = validate_program(&program, &ParamRegistry::shipped());
            if !report.ok {
                return Err(input(report));
            }
            let draft = commands::cmd_record_rule(&scenario, &program).map_err(|e| match e {
                RecordError::NoTrigger(_) => input(e),
                RecordError::InjectionNeverReached(_) => CliError::Failure(e.to_string()),
            })?;
            let fragment = serde_json::to_string_pretty(&[&draft.rule]).expect("rules serialize");
            eprintln!("captured at t={:.1}s: {:?}", draft.captured_at, draft.status);
            match out {
                Some(_) => write_out(&out, &fragment),
                None => {
                    println!("{fragment}");
                    Ok(())
                }
            }
        }
        Cmd::Serve { scenario, addr, tick_ms, provider } => {
            let scenario = Scenario::load(&scenario).map_err(input)?;
            // Built before the runtime: the remote client blocks.
            let translator = Arc::new(commands::shipped_translator(commands::make_provider(provider)?));
            let gw = Gateway::new(scenario, translator, provider == ProviderKind::Http).map_err(input)?;
            let rt = tokio::runtime::Runtime::new().map_err(input)?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await.map_err(input)?;
                eprintln!("listening on {addr}");
                gateway::serve(listener, gw, Duration::from_millis(tick_ms.max(1))).await.map_err(input)
            })
        }
    }
}
