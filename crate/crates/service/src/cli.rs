//! Command-line entry points.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use parley_core::ingest::{parse_transcript_str, Pacer};
use parley_core::metrics::{compute_report, report_to_json, DEFAULT_PAUSE_THRESHOLD_MS};
use parley_core::session::event::{log_from_ndjson, log_to_ndjson};
use parley_core::settings::AppConfig;
use parley_core::simulate::{run_replay, ReplayConfig};

use crate::backend::{build, BackendKind};
use crate::server::{spawn, ServerConfig};

#[derive(Debug, Parser)]
#[command(name = "parley", version, about = "Real-time conversation support sessions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Host live sessions over NDJSON or WebSocket.
    Serve(ServeArgs),
    /// Run a transcript through a headless session.
    Replay(ReplayArgs),
    /// Compute session metrics from an event log.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 7878)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: BackendKind,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for the mock backend's latency jitter.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write each session's event log here. Off by default.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub transcript: PathBuf,
    /// Wall-clock speed ratio; 0 runs as fast as possible.
    #[arg(long, default_value_t = 0.0)]
    pub speed: f64,
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: BackendKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for events.ndjson and report.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PAUSE_THRESHOLD_MS)]
    pub pause_threshold_ms: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PAUSE_THRESHOLD_MS)]
    pub pause_threshold_ms: u64,
    /// Transcript whose off-topic annotations feed the detector diagnostic.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    /// Bad input: missing files, unparsable transcripts or configs.
    fn input(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }

    fn runtime(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

fn read_input(path: &Path, what: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| {
        let msg = if e.kind() == std::io::ErrorKind::NotFound {
            format!("{what} {}: no such file", path.display())
        } else {
            format!("{what} {}: {e}", path.display())
        };
        CliError::input(anyhow::anyhow!(msg))
    })
}

pub fn load_config(path: Option<&Path>) -> Result<AppConfig, CliError> {
    let Some(path) = path else {
        return Ok(AppConfig::default());
    };
    let text = read_input(path, "config")?;
    AppConfig::from_json(&text).map_err(|e| CliError::input(anyhow::anyhow!("config {}: {e}", path.display())))
}

pub fn replay(args: &ReplayArgs) -> Result<(), CliError> {
    if args.backend != BackendKind::Mock {
        return Err(CliError::input(anyhow::anyhow!(
            "replay supports only the mock backend; use serve for http"
        )));
    }
    let app = load_config(args.config.as_deref())?;
    let text = read_input(&args.transcript, "transcript")?;
    let transcript = parse_transcript_str(&text)
        .map_err(|e| CliError::input(anyhow::anyhow!("transcript {}: {e}", args.transcript.display())))?;
    let pacer = Pacer::new(args.speed).map_err(|e| CliError::input(e.into()))?;
    let outcome = run_replay(&transcript, &ReplayConfig::from_app(&app, args.seed), &pacer);
    let log = &outcome.state.event_log;
    let report = compute_report(log, Some(&transcript.annotations), args.pause_threshold_ms)
        .map_err(|e| CliError::runtime(e.into()))?;

    let write = || -> anyhow::Result<()> {
        std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
        std::fs::write(args.out.join("events.ndjson"), log_to_ndjson(log))?;
        std::fs::write(args.out.join("report.json"), report_to_json(&report))?;
        Ok(())
    };
    write().map_err(CliError::runtime)
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let text = read_input(&args.log, "event log")?;
    let log = log_from_ndjson(&text).map_err(|e| CliError::input(e.into()))?;
    let annotations = match &args.transcript {
        Some(path) => {
            let t = parse_transcript_str(&read_input(path, "transcript")?)
                .map_err(|e| CliError::input(anyhow::anyhow!("transcript {}: {e}", path.display())))?;
            Some(t.annotations)
        }
        None => None,
    };
    let report = compute_report(&log, annotations.as_deref(), args.pause_threshold_ms)
        .map_err(|e| CliError::input(e.into()))?;
    let json = report_to_json(&report);
    match &args.out {
        Some(path) => std::fs::write(path, json).map_err(|e| CliError::runtime(e.into())),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

pub fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let app = load_config(args.config.as_deref())?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::input(anyhow::anyhow!("bad listen address: {e}")))?;
    if let Some(dir) = &args.log_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::input(anyhow::anyhow!("log dir {}: {e}", dir.display())))?;
    }
    let backend = build(args.backend, args.seed, app.mock, app.http.clone()).map_err(CliError::input)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime(e.into()))?;
    runtime.block_on(async {
        let mut config = ServerConfig::new(app, backend);
        config.log_dir = args.log_dir.clone();
        let (local, stop, handle) = spawn(addr, config)
            .await
            .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot bind {addr}: {e}")))?;
        // the readiness line tooling waits for
        println!("listening on {local}");
        wait_for_signal().await;
        tracing::info!("shutting down");
        let _ = stop.send(true);
        let _ = handle.await;
        Ok(())
    })
}

async fn wait_for_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Serve(args) => serve(args),
        Command::Replay(args) => replay(args),
        Command::Report(args) => report(args),
    }
}
