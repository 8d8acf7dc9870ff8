//! `gbs`: run experiments, replay and analyze logs, validate inputs, and host
//! live lobbies.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use gbs_core::analytics::{build_report, write_report, ReportOptions, Section, StabilityAxis};
use gbs_core::datastore::{
    find_logs, import_external_trace_file, read_session_file, read_session_unchecked, ImportOptions,
    SessionLog,
};
use gbs_core::gateway::CassetteMode;
use gbs_core::manifest::{build_gateways, resolve_manifest, Overrides, BUNDLED};
use gbs_core::orchestrator::{run_experiment, DefaultFactory, RunOptions};
use gbs_core::replay::verify;
use gbs_core::stats::CiMethod;
use gbs_core::FeedbackMode;
use serde_json::json;

#[derive(Parser)]
#[command(name = "gbs", version, about = "Group Binary Search experiments")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every session of a manifest (a path or a bundled name).
    Run {
        #[arg(required_unless_present = "list")]
        manifest: Option<String>,
        #[arg(long, default_value = "off")]
        cassette: CassetteMode,
        /// Cassette file; defaults to `<out>/cassette.jsonl`.
        #[arg(long)]
        cassette_file: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replications: Option<u32>,
        /// Overrides the manifest's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Sessions run at once.
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
        /// List the bundled manifests and exit.
        #[arg(long)]
        list: bool,
    },
    /// Re-drive a log through the engine.
    Replay {
        log: PathBuf,
        /// Fail unless every round's feedback is reproduced exactly.
        #[arg(long)]
        verify: bool,
    },
    /// Compute metrics from logs (directories, `.jsonl` logs or `.csv` traces).
    Analyze {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Comma-separated: all, rounds, slopes, reaction, switching, stay, signature, hist.
        #[arg(long, default_value = "all")]
        report: String,
        #[arg(long, default_value_t = 0)]
        bootstrap_seed: u64,
        #[arg(long, default_value_t = gbs_core::stats::DEFAULT_BOOTSTRAP_ITERATIONS)]
        iterations: usize,
        #[arg(long, default_value = "percentile")]
        ci_method: CiMethod,
        /// Use one minus the switching rate as the stability axis.
        #[arg(long)]
        switch_rate_axis: bool,
        /// Condition label for imported `.csv` traces.
        #[arg(long, default_value = "humans")]
        csv_condition: String,
        /// Directory for report.json and the CSV tables.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a manifest (`.toml` or bundled name) or a session log.
    Validate { input: String },
    /// Host live lobbies over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Manifest whose providers serve model seats.
        #[arg(long)]
        providers: Option<String>,
        #[arg(long, default_value = "off")]
        cassette: CassetteMode,
        #[arg(long)]
        cassette_file: Option<PathBuf>,
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1800)]
        lobby_ttl_secs: u64,
        /// Default per-round deadline; 0 waits indefinitely.
        #[arg(long, default_value_t = 60)]
        round_timeout_secs: u64,
    },
}

/// A failed command: message and exit code.
struct Failure(String, u8);

fn runtime(msg: impl ToString) -> Failure {
    Failure(msg.to_string(), 2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("GBS_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let json = cli.json;
    let result = match cli.command {
        Command::Run { manifest, cassette, cassette_file, out, replications, seed, parallelism, list } => {
            if list {
                list_manifests(json)
            } else {
                run(manifest.as_deref().unwrap_or_default(), cassette, cassette_file, out, Overrides { base_seed: seed, replications }, parallelism, json)
            }
        }
        Command::Replay { log, verify } => replay(&log, verify, json),
        Command::Analyze {
            inputs,
            report,
            bootstrap_seed,
            iterations,
            ci_method,
            switch_rate_axis,
            csv_condition,
            out,
        } => {
            let opts = ReportOptions {
                bootstrap_seed,
                bootstrap_iterations: iterations,
                ci_method,
                stability_axis: if switch_rate_axis {
                    StabilityAxis::OneMinusSwitchRate
                } else {
                    StabilityAxis::StayProbability
                },
                ..ReportOptions::default()
            };
            analyze(&inputs, &report, &opts, &csv_condition, out.as_deref(), json)
        }
        Command::Validate { input } => validate(&input, json),
        Command::Serve { addr, providers, cassette, cassette_file, log_dir, lobby_ttl_secs, round_timeout_secs } => {
            serve(addr, providers, cassette, cassette_file, log_dir, lobby_ttl_secs, round_timeout_secs)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg, code)) => {
            if json {
                println!("{}", json!({ "ok": false, "error": msg }));
            } else {
                eprintln!("error: {msg}");
            }
            ExitCode::from(code)
        }
    }
}

fn list_manifests(json: bool) -> Result<(), Failure> {
    if json {
        let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
        println!("{}", json!({ "ok": true, "bundled": names }));
    } else {
        for (name, _) in BUNDLED {
            println!("{name}");
        }
    }
    Ok(())
}

fn mean_rounds(log: &SessionLog, mode: FeedbackMode) -> Option<f64> {
    let rs: Vec<f64> = log
        .games
        .iter()
        .filter(|g| g.feedback_mode == mode)
        .filter_map(|g| g.rounds_to_solution(log.header.max_rounds))
        .map(f64::from)
        .collect();
    (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
}

fn run(
    manifest: &str,
    cassette: CassetteMode,
    cassette_file: Option<PathBuf>,
    out: Option<PathBuf>,
    overrides: Overrides,
    parallelism: usize,
    json: bool,
) -> Result<(), Failure> {
    let m = resolve_manifest(manifest, &overrides).map_err(|e| runtime(format!("{manifest}: {e}")))?;
    let cassette_path = cassette_file.or_else(|| out.as_ref().map(|d| d.join("cassette.jsonl")));
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    let gateways = build_gateways(&m.providers, cassette, cassette_path.as_deref()).map_err(runtime)?;
    let factory = DefaultFactory::with_gateways(gateways);
    let outcome = run_experiment(&m.experiment, &factory, &RunOptions::default(), out.as_deref(), parallelism);

    let mut rows = Vec::new();
    for entry in &outcome.manifest {
        let log = outcome
            .logs
            .iter()
            .chain(outcome.failures.iter().map(|f| f.partial.as_ref()))
            .find(|l| l.header.session_id == entry.session_id);
        let (dir, num) = log.map_or((None, None), |l| {
            (mean_rounds(l, FeedbackMode::Directional), mean_rounds(l, FeedbackMode::Numerical))
        });
        rows.push(json!({
            "session_id": entry.session_id,
            "n_players": entry.n_players,
            "replication": entry.replication,
            "ok": entry.ok,
            "mean_rounds_directional": dir,
            "mean_rounds_numerical": num,
            "failure": entry.failure,
        }));
    }
    let ok = outcome.failures.is_empty();
    if json {
        println!("{}", json!({ "ok": ok, "manifest": m.name, "sessions": rows, "failures": outcome.failures.len() }));
    } else {
        println!("{:<28} {:>3} {:>9} {:>9}  status", "session", "n", "dir", "num");
        let fmt = |v: &serde_json::Value| v.as_f64().map_or("-".to_string(), |x| format!("{x:.2}"));
        for r in &rows {
            println!(
                "{:<28} {:>3} {:>9} {:>9}  {}",
                r["session_id"].as_str().unwrap_or_default(),
                r["n_players"],
                fmt(&r["mean_rounds_directional"]),
                fmt(&r["mean_rounds_numerical"]),
                r["failure"].as_str().map_or("ok".to_string(), |f| format!("FAILED: {f}")),
            );
        }
        println!("{} sessions, {} failed", rows.len(), outcome.failures.len());
        if let Some(dir) = &out {
            println!("logs written to {}", dir.display());
        }
    }
    if ok {
        Ok(())
    } else {
        let first = &outcome.failures[0];
        Err(runtime(format!("{} of {} sessions failed; first: {}", outcome.failures.len(), rows.len(), first)))
    }
}

fn replay(path: &Path, verify_flag: bool, json: bool) -> Result<(), Failure> {
    let file = std::fs::File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let log = read_session_unchecked(file, &path.display().to_string()).map_err(runtime)?;
    let verdict = verify(&log);
    if json {
        let mut v = serde_json::to_value(&verdict).expect("verdict serializes");
        v["ok"] = json!(verdict.passed() || !verify_flag);
        v["session_id"] = json!(log.header.session_id);
        println!("{v}");
    } else {
        println!("{}: {verdict}", log.header.session_id);
    }
    match (verify_flag, verdict.failed_round()) {
        (true, Some((game, round))) => Err(Failure(format!("verification failed at game {game} round {round}"), 2)),
        _ => Ok(()),
    }
}

fn load_inputs(inputs: &[PathBuf], csv_condition: &str) -> Result<Vec<SessionLog>, Failure> {
    let mut logs = Vec::new();
    for input in inputs {
        if !input.exists() {
            return Err(runtime(format!("{}: no such file or directory", input.display())));
        }
        if input.extension().is_some_and(|e| e == "csv") {
            let opts = ImportOptions { condition: csv_condition.to_string(), ..ImportOptions::default() };
            logs.extend(import_external_trace_file(input, &opts).map_err(runtime)?);
            continue;
        }
        for path in find_logs(input).map_err(runtime)? {
            logs.push(read_session_file(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?);
        }
    }
    Ok(logs)
}

fn analyze(
    inputs: &[PathBuf],
    report: &str,
    opts: &ReportOptions,
    csv_condition: &str,
    out: Option<&Path>,
    json: bool,
) -> Result<(), Failure> {
    let sections: Vec<Section> = if report == "all" {
        Section::ALL.to_vec()
    } else {
        report
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, String>>()
            .map_err(|e| Failure(e, 1))?
    };
    let logs = load_inputs(inputs, csv_condition)?;
    let report = build_report(&logs, &sections, opts).map_err(runtime)?;
    let written = match out {
        Some(dir) => write_report(&report, dir).map_err(runtime)?,
        None => Vec::new(),
    };
    if json || out.is_none() {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    }
    if !json {
        if let Some(dir) = out {
            eprintln!("{} logs analyzed; wrote {} files to {}", logs.len(), written.len(), dir.display());
        }
    }
    Ok(())
}

fn validate(input: &str, json: bool) -> Result<(), Failure> {
    let path = Path::new(input);
    let is_log = path.extension().is_some_and(|e| e == "jsonl");
    let summary = if is_log {
        let log = read_session_file(path).map_err(runtime)?;
        json!({
            "ok": true,
            "kind": "log",
            "session_id": log.header.session_id,
            "games": log.games.len(),
            "complete": log.is_complete(),
        })
    } else {
        let m = resolve_manifest(input, &Overrides::default()).map_err(|e| runtime(format!("{input}: {e}")))?;
        json!({
            "ok": true,
            "kind": "manifest",
            "name": m.name,
            "sessions": m.experiment.sessions.len(),
            "replications": m.experiment.replications,
            "providers": m.providers.iter().map(|p| p.name.clone()).collect::<Vec<_>>(),
        })
    };
    if json {
        println!("{summary}");
    } else if is_log {
        println!("{input}: valid log, {} games", summary["games"]);
    } else {
        println!("{input}: valid manifest `{}`, {} sessions", summary["name"].as_str().unwrap_or_default(), summary["sessions"]);
    }
    Ok(())
}

fn serve(
    addr: SocketAddr,
    providers: Option<String>,
    cassette: CassetteMode,
    cassette_file: Option<PathBuf>,
    log_dir: Option<PathBuf>,
    lobby_ttl_secs: u64,
    round_timeout_secs: u64,
) -> Result<(), Failure> {
    let providers = match providers {
        Some(p) => resolve_manifest(&p, &Overrides::default()).map_err(|e| runtime(format!("{p}: {e}")))?.providers,
        None => Vec::new(),
    };
    let gateways = build_gateways(&providers, cassette, cassette_file.as_deref()).map_err(runtime)?;
    let config = gbs_live::ServiceConfig {
        lobby_ttl: Duration::from_secs(lobby_ttl_secs),
        default_round_timeout: Duration::from_secs(round_timeout_secs),
        log_dir,
        factory: Arc::new(DefaultFactory::with_gateways(gateways)),
    };
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    eprintln!("serving on http://{addr}");
    rt.block_on(gbs_live::serve(addr, config)).map_err(runtime)
}
