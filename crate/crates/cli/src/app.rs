//! The `hatchsens` commands. Each returns the process exit code.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hatchsens_core::config::DEFAULT_OUT_DIR;
use hatchsens_core::gateway::persist::{Manifest, PersistError, RunWriter};
use hatchsens_core::report::{self, Report};
use hatchsens_core::runner::{self, exit_code, ReplayError, EXIT_INVALID_CONFIG, EXIT_IO, EXIT_OK};
use hatchsens_core::{Mode, RunConfig, RunOutcome, SimOptions, Simulation};

use crate::api::{self, AppState, ReplayView};
use crate::live::LiveRun;

pub const OUT_ENV: &str = "HATCHSENS_OUT";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "hatchsens", version, about = "Simulated sensor network for brine shrimp hatching runs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Check a run config and report every problem found.
    Validate { config: PathBuf },
    /// Execute a run into a new run directory.
    Run(RunArgs),
    /// Rebuild gateway state from a run directory and check it against the
    /// recorded alerts and report.
    Replay {
        dir: PathBuf,
        /// Serve the replayed state read-only on this address.
        #[arg(long)]
        serve: Option<String>,
    },
    /// Print the report of a run directory.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run as fast as possible with attested gates (the default).
    #[arg(long, conflicts_with = "live")]
    pub batch: bool,
    /// Pace sim time against the wall clock and serve the API.
    #[arg(long)]
    pub live: bool,
    /// Sim seconds per wall second in live mode.
    #[arg(long)]
    pub accel: Option<f64>,
    /// Parent directory for the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// API listen address in live mode.
    #[arg(long)]
    pub serve: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Md,
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Cmd::Validate { config } => validate(&config),
        Cmd::Run(args) => run_cmd(&args),
        Cmd::Replay { dir, serve } => replay_cmd(&dir, serve.as_deref()),
        Cmd::Report { dir, format } => report_cmd(&dir, format),
    }
}

fn validate(path: &Path) -> i32 {
    let result = RunConfig::load(path).and_then(|cfg| cfg.validate());
    match result {
        Ok(()) => {
            println!("{}: ok", path.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}: invalid config", path.display());
            for line in e.to_string().lines() {
                eprintln!("  {line}");
            }
            EXIT_INVALID_CONFIG
        }
    }
}

/// `--out`, then `$HATCHSENS_OUT`, then the config's `out_dir`, then `runs`.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<&str>, config: Option<&str>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .or_else(|| config.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn fresh_run_dir(parent: &Path, stem: &str, seed: u64, stamp: &str) -> PathBuf {
    let base = format!("{stem}-s{seed}-{stamp}");
    let mut dir = parent.join(&base);
    let mut n = 2;
    while dir.exists() {
        dir = parent.join(format!("{base}-{n}"));
        n += 1;
    }
    dir
}

fn io_failure(e: &PersistError) -> i32 {
    eprintln!("error: {e}");
    EXIT_IO
}

fn run_cmd(args: &RunArgs) -> i32 {
    let mut cfg = match RunConfig::load(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{}: {e}", args.config.display());
            return EXIT_INVALID_CONFIG;
        }
    };
    if args.live {
        cfg.mode = Mode::Live;
    } else if args.batch {
        cfg.mode = Mode::Batch;
    }
    if let Some(a) = args.accel {
        cfg.accel = a;
    }
    if let Some(serve) = &args.serve {
        cfg.serve = Some(serve.clone());
    }
    // culture problems are left to the lifecycle gate, which ends the run
    // blocked rather than refusing to start it
    let errors = cfg.structural_errors();
    if !errors.is_empty() {
        eprintln!("{}: invalid config", args.config.display());
        for e in errors {
            eprintln!("  {e}");
        }
        return EXIT_INVALID_CONFIG;
    }
    if cfg.mode == Mode::Live {
        if let Err(e) = listen_addr(cfg.serve.as_deref()) {
            eprintln!("error: {e}");
            return EXIT_INVALID_CONFIG;
        }
    }
    let now = chrono::Utc::now();
    let seed = match (args.seed.or(cfg.seed), cfg.mode) {
        (Some(s), _) => s,
        (None, Mode::Batch) => {
            eprintln!("error: batch runs need a seed (--seed or `seed` in the config)");
            return EXIT_INVALID_CONFIG;
        }
        (None, Mode::Live) => now.timestamp_nanos_opt().unwrap_or_default() as u64,
    };

    let env = std::env::var(OUT_ENV).ok();
    let parent = resolve_out_dir(args.out.as_deref(), env.as_deref(), cfg.out_dir.as_deref());
    let stem = args.config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let dir = fresh_run_dir(&parent, stem, seed, &now.format("%Y%m%dT%H%M%SZ").to_string());
    let epoch = now.to_rfc3339_opts(chrono::SecondsFormat::Millis, true);

    let (outcome, report) = match cfg.mode {
        Mode::Batch => match runner::run_batch(&cfg, seed, &dir, epoch) {
            Ok(res) => (res.outcome, res.report),
            Err(e) => return io_failure(&e),
        },
        Mode::Live => match run_live(&cfg, seed, &dir, epoch) {
            Ok(pair) => pair,
            Err(e) => {
                eprintln!("error: {e:#}");
                return EXIT_IO;
            }
        },
    };
    println!("{}", dir.display());
    summarize(&report, outcome);
    exit_code(outcome)
}

fn summarize(r: &Report, outcome: RunOutcome) {
    let last = r.phases.last().map_or("none".to_string(), |p| p.phase.to_string());
    eprintln!("outcome: {outcome:?} (last phase {last}, t = {} s)", r.end_t);
    eprintln!("readings: {}, alerts raised: {}", r.readings, r.alerts.total_raised);
    match r.hatch.first_crossing_t {
        Some(t) => eprintln!("hatch estimate reached 0.999 at t = {t:.1} s"),
        None => eprintln!("hatch estimate at end: {:.4}", r.hatch.final_h_est),
    }
    if outcome == RunOutcome::GateBlocked {
        eprintln!("run ended blocked at a lifecycle gate; see phases.ndjson for the reasons");
    }
}

fn listen_addr(s: Option<&str>) -> anyhow::Result<SocketAddr> {
    let s = s.unwrap_or(DEFAULT_LISTEN);
    s.parse().with_context(|| format!("bad listen address '{s}'"))
}

fn run_live(cfg: &RunConfig, seed: u64, dir: &Path, epoch: String) -> anyhow::Result<(RunOutcome, Report)> {
    let addr = listen_addr(cfg.serve.as_deref())?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        let addr = listener.local_addr()?;
        let manifest = runner::manifest_for(cfg, seed, epoch);
        let writer = RunWriter::create(dir, &manifest, cfg.frames_log)?;
        let mut sim = Simulation::new(cfg.clone(), seed, SimOptions::for_mode(Mode::Live));
        sim.attach_writer(writer);
        let live = LiveRun::spawn(sim, manifest, cfg.accel, dir.to_path_buf());
        eprintln!("live run in {}, API on http://{}/api/v1 (Ctrl-C stops the run)", dir.display(), addr);
        let app = api::router(live.state.clone());
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = stop_rx.await;
                })
                .await
        });
        let ctrl_c = tokio::signal::ctrl_c();
        tokio::pin!(ctrl_c);
        let mut interrupted = false;
        while !live.is_done() {
            tokio::select! {
                _ = &mut ctrl_c, if !interrupted => {
                    interrupted = true;
                    live.shutdown();
                }
                _ = tokio::time::sleep(Duration::from_millis(100)) => {}
            }
        }
        let _ = stop_tx.send(());
        let result = tokio::task::spawn_blocking(move || live.join()).await?;
        server.abort();
        Ok(result?)
    })
}

fn replay_cmd(dir: &Path, serve: Option<&str>) -> i32 {
    let rep = match runner::replay(dir) {
        Ok(r) => r,
        Err(ReplayError::NotARun(p)) => {
            eprintln!("error: {} is not a run directory (no manifest.json)", p.display());
            return EXIT_IO;
        }
        Err(ReplayError::Persist(e)) => return io_failure(&e),
    };
    let yes_no = |b: bool| if b { "yes" } else { "no" };
    println!("readings: {}", rep.gateway.readings().len());
    println!("alerts: {}", rep.gateway.alerts().all().count());
    println!("alert transitions match alerts.ndjson: {}", yes_no(rep.alerts_match));
    match rep.report_match {
        Some(m) => println!("report matches report.json: {}", yes_no(m)),
        None => println!("report.json: not present"),
    }
    let Some(serve) = serve else {
        return EXIT_OK;
    };
    let manifest = match Manifest::load(dir) {
        Ok(m) => m,
        Err(e) => return io_failure(&e),
    };
    let view = ReplayView {
        phases: rep.report.phases.clone(),
        end_t: rep.report.end_t,
        outcome: rep.report.outcome,
        gateway: rep.gateway,
    };
    let state = AppState::replay(view, manifest);
    match serve_until_ctrl_c(state, serve) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_IO
        }
    }
}

fn serve_until_ctrl_c(state: AppState, addr: &str) -> anyhow::Result<()> {
    let addr = listen_addr(Some(addr))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("serving replay read-only on http://{addr}/api/v1 (Ctrl-C to quit)");
        axum::serve(listener, api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn report_cmd(dir: &Path, format: Format) -> i32 {
    if !dir.join(hatchsens_core::gateway::persist::MANIFEST).is_file() {
        eprintln!("error: {} is not a run directory (no manifest.json)", dir.display());
        return EXIT_IO;
    }
    let r = match report::compute_report(dir) {
        Ok(r) => r,
        Err(e) => return io_failure(&e),
    };
    match format {
        Format::Json => print!("{}", report::report_json(&r)),
        Format::Md => print!("{}", report::render_markdown(&r)),
    }
    EXIT_OK
}
