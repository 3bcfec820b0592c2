use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use crowdms_core::config::ProjectConfig;
use crowdms_core::event::ProjectEvent;
use crowdms_core::eventlog::{self, LogError};
use crowdms_core::fixtures::todo::Variant;
use crowdms_core::sandbox::{
    serve as serve_wire, ExecutionBundle, ExecutorError, ExecutorPort, MockExecutor, Script, SeedDocument,
    SubprocessExecutor, TestRunReport,
};
use crowdms_core::sim::scenario::{describe, todo_end_to_end};
use crowdms_core::sim::{replay, run_simulation, SimulationConfig};
use crowdms_core::value::to_canonical_string;
use crowdms_service::{AppState, ProjectStore, ServiceConfig, StaticTokens, SystemClock};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "crowdms", version, about = "Crowd microservice workflow tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated crowd and write its log, metrics and final state.
    Simulate {
        /// Simulation config (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a log against the workflow invariants and print its metrics.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Print one line per event.
    DumpEvents {
        #[arg(long, required_unless_present = "project", conflicts_with = "project")]
        log: Option<PathBuf>,
        /// Project id under `--data-dir`, e.g. proj-1.
        #[arg(long)]
        project: Option<String>,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
    },
    /// Drive the ToDo request to completion with a scripted crowd.
    Todo {
        #[arg(long, value_enum, default_value = "corrected")]
        variant: VariantArg,
        /// Writes the assembled service here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Token file (TOML) mapping bearer tokens to workers and clients.
        #[arg(long)]
        tokens: PathBuf,
        /// Project config (TOML) applied to new projects.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "published")]
        deploy_dir: PathBuf,
        /// Documents each test run starts from (JSON list).
        #[arg(long)]
        seed: Option<PathBuf>,
        /// Harness command line, e.g. "node harness.js". Without one, tests
        /// run against an unscripted mock.
        #[arg(long)]
        harness: Option<String>,
        /// Seconds between background clock ticks.
        #[arg(long, default_value_t = 15)]
        tick_secs: u64,
    },
    /// Speak the executor wire protocol on stdin/stdout with scripted outcomes.
    MockHarness {
        /// JSON list of {entry, version, test, script}.
        #[arg(long)]
        scripts: Option<PathBuf>,
        /// Sleep before answering each request.
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Corrected,
    Defective,
}

type Failure = (u8, String);

fn fail(code: u8, message: impl std::fmt::Display) -> Failure {
    (code, message.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, seed, out } => simulate(config.as_deref(), seed, &out),
        Command::Replay { log } => replay_log(&log),
        Command::DumpEvents { log, project, data_dir } => {
            let path = match (log, project) {
                (Some(log), _) => log,
                (None, Some(id)) => data_dir.join("projects").join(id).join("events.ndjson"),
                (None, None) => unreachable!("clap requires one of --log and --project"),
            };
            dump_events(&path)
        }
        Command::Todo { variant, out } => todo(variant, out.as_deref()),
        Command::Serve { addr, data_dir, tokens, config, deploy_dir, seed, harness, tick_secs } => {
            serve(&addr, data_dir, &tokens, config.as_deref(), deploy_dir, seed.as_deref(), harness, tick_secs)
        }
        Command::MockHarness { scripts, delay_ms } => mock_harness(scripts.as_deref(), delay_ms),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err((code, message)) => {
            eprintln!("crowdms: {message}");
            ExitCode::from(code)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn canonical<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    to_canonical_string(value).map_err(|e| fail(2, e))
}

fn simulate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<u8, Failure> {
    let mut config = match config {
        Some(path) => SimulationConfig::from_toml(&read(path)?).map_err(|e| fail(2, e))?,
        None => SimulationConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let outcome = run_simulation(&config).map_err(|e| fail(2, e))?;
    fs::create_dir_all(out).map_err(|e| fail(2, format!("{}: {e}", out.display())))?;
    eventlog::write_log(&out.join("events.ndjson"), &outcome.events).map_err(|e| fail(2, e))?;
    write(&out.join("metrics.json"), &canonical(&outcome.metrics)?)?;
    write(&out.join("state.json"), &canonical(&outcome.state)?)?;
    let c = &outcome.metrics.counts;
    println!(
        "{} events, {} IFB submissions, {} reviews generated, {} functions completed, {} violations",
        c.events,
        c.ifb_submissions,
        c.reviews_generated,
        outcome.metrics.functions_completed,
        outcome.metrics.invariant_violations.len()
    );
    Ok(if outcome.metrics.invariant_violations.is_empty() { 0 } else { 1 })
}

/// Reads records without requiring dense sequences, so that gaps show up as
/// violations rather than a parse failure.
fn load_records(path: &Path) -> Result<Vec<ProjectEvent>, Failure> {
    eventlog::read_records(path).map_err(|e| match e {
        LogError::Io(e) => fail(2, format!("{}: {e}", path.display())),
        other => fail(2, other),
    })
}

fn replay_log(log: &Path) -> Result<u8, Failure> {
    let events = load_records(log)?;
    let (report, metrics) = replay(&events);
    for v in &report.violations {
        println!("violation {v}");
    }
    println!("{}", canonical(&metrics)?);
    Ok(if report.is_clean() { 0 } else { 1 })
}

fn dump_events(log: &Path) -> Result<u8, Failure> {
    for e in load_records(log)? {
        println!("{}", describe(&e));
    }
    Ok(0)
}

fn todo(variant: VariantArg, out: Option<&Path>) -> Result<u8, Failure> {
    let variant = match variant {
        VariantArg::Corrected => Variant::Corrected,
        VariantArg::Defective => Variant::Defective,
    };
    let run = todo_end_to_end(variant).map_err(|e| fail(2, e))?;
    println!(
        "{} functions, {} routes, {} files; oracle {}/{}",
        run.project.state().functions.len(),
        run.tree.route_manifest.len(),
        run.tree.function_files().len(),
        run.oracle.passed,
        run.oracle.total
    );
    for id in &run.oracle.failing {
        println!("failing {id}");
    }
    if let Some(dir) = out {
        for (path, bytes) in &run.tree.files {
            let target = dir.join(path);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(|e| fail(2, format!("{}: {e}", parent.display())))?;
            }
            fs::write(&target, bytes).map_err(|e| fail(2, format!("{}: {e}", target.display())))?;
        }
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn serve(
    addr: &str,
    data_dir: PathBuf,
    tokens: &Path,
    config: Option<&Path>,
    deploy_dir: PathBuf,
    seed: Option<&Path>,
    harness: Option<String>,
    tick_secs: u64,
) -> Result<u8, Failure> {
    tracing_subscriber::fmt().with_writer(io::stderr).init();
    let auth = StaticTokens::load(tokens).map_err(|e| fail(2, format!("{}: {e}", tokens.display())))?;
    let project = match config {
        Some(path) => ProjectConfig::parse(&read(path)?).map_err(|e| fail(2, e))?,
        None => ProjectConfig::default(),
    };
    let persistence_seed: Vec<SeedDocument> = match seed {
        Some(path) => serde_json::from_str(&read(path)?).map_err(|e| fail(2, format!("{}: {e}", path.display())))?,
        None => vec![],
    };
    let executor: Arc<dyn ExecutorPort> = match harness {
        Some(line) => {
            let mut parts = line.split_whitespace();
            let program = parts.next().ok_or_else(|| fail(2, "empty harness command"))?;
            Arc::new(SubprocessExecutor::new(program, parts))
        }
        None => Arc::new(MockExecutor::new()),
    };
    let store = ProjectStore::open(&data_dir).map_err(|e| fail(2, e))?;
    let config = ServiceConfig { project, deploy_dir, persistence_seed };
    let app = AppState::new(config, store, Arc::new(auth), executor, Arc::new(SystemClock));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| fail(2, e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| fail(2, format!("{addr}: {e}")))?;
        eprintln!("listening on {}", listener.local_addr().map_err(|e| fail(2, e))?);
        crowdms_service::spawn_ticker(app.clone(), Duration::from_secs(tick_secs.max(1)));
        crowdms_service::serve(listener, app).await.map_err(|e| fail(2, e))
    })?;
    Ok(0)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptEntry {
    entry: String,
    version: u64,
    test: String,
    script: Script,
}

struct Delayed {
    inner: MockExecutor,
    delay: Duration,
}

impl ExecutorPort for Delayed {
    fn execute(&self, bundle: &ExecutionBundle) -> Result<TestRunReport, ExecutorError> {
        thread::sleep(self.delay);
        self.inner.execute(bundle)
    }
}

fn mock_harness(scripts: Option<&Path>, delay_ms: u64) -> Result<u8, Failure> {
    let mut mock = MockExecutor::new();
    if let Some(path) = scripts {
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(&read(path)?).map_err(|e| fail(2, format!("{}: {e}", path.display())))?;
        for e in entries {
            mock.script(&e.entry, e.version, &e.test, e.script);
        }
    }
    let executor = Delayed { inner: mock, delay: Duration::from_millis(delay_ms) };
    let (mut input, mut output) = (io::stdin().lock(), io::stdout().lock());
    serve_wire(&mut input, &mut output, &executor).map_err(|e| fail(3, format!("protocol violation: {e}")))?;
    Ok(0)
}
