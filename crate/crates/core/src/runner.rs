//! Whole-run drivers: batch execution into a run directory, and replay of
//! a finished directory.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::RunConfig;
use crate::gateway::alerts::{AlertSource, AlertTransition, TransitionKind};
use crate::gateway::persist::{self, Manifest, PersistError, RunWriter, ALERTS, MANIFEST, READINGS, REPORT};
use crate::gateway::Gateway;
use crate::model::Reading;
use crate::parmi::RunOutcome;
use crate::report::{self, Report};
use crate::sim::{SimOptions, Simulation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_GATE_BLOCKED: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub fn exit_code(outcome: RunOutcome) -> i32 {
    match outcome {
        RunOutcome::Completed => EXIT_OK,
        RunOutcome::GateBlocked => EXIT_GATE_BLOCKED,
    }
}

pub fn manifest_for(cfg: &RunConfig, seed: u64, epoch_wall: String) -> Manifest {
    Manifest {
        format_version: persist::FORMAT_VERSION,
        seed,
        mode: cfg.mode.to_string(),
        accel: (cfg.mode == crate::config::Mode::Live).then_some(cfg.accel),
        epoch_wall,
        thresholds: cfg.thresholds(),
        config: RunConfig { seed: Some(seed), ..cfg.clone() },
    }
}

#[derive(Debug)]
pub struct BatchResult {
    pub outcome: RunOutcome,
    pub report: Report,
    pub truth_crossing_t: Option<f64>,
    pub dir: PathBuf,
}

/// Runs the whole lifecycle as fast as possible, writing into `dir`.
pub fn run_batch(cfg: &RunConfig, seed: u64, dir: &Path, epoch_wall: String) -> Result<BatchResult, PersistError> {
    let manifest = manifest_for(cfg, seed, epoch_wall);
    let writer = RunWriter::create(dir, &manifest, cfg.frames_log)?;
    let mut sim = Simulation::new(cfg.clone(), seed, SimOptions::for_mode(crate::config::Mode::Batch));
    sim.attach_writer(writer);
    let outcome = sim.run_to_end()?;
    sim.close()?;
    let report = report::finalize_report(dir)?;
    Ok(BatchResult { outcome, report, truth_crossing_t: sim.truth_crossing_t(), dir: dir.to_path_buf() })
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{}: not a run directory (no {MANIFEST})", .0.display())]
    NotARun(PathBuf),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Debug)]
pub struct Replay {
    pub gateway: Gateway,
    pub report: Report,
    /// Reading-driven alert transitions match the recorded ones.
    pub alerts_match: bool,
    /// Recomputed report is byte-identical to report.json (None if the
    /// run never wrote one).
    pub report_match: Option<bool>,
}

fn reading_driven(tr: &AlertTransition) -> bool {
    matches!(tr.alert.source, AlertSource::Sensor(_)) && tr.transition != TransitionKind::Acked
}

/// Alert identity without the id, which depends on interleaving with
/// silence alerts.
fn alert_key(tr: &AlertTransition) -> String {
    let mut a = tr.alert.clone();
    a.id = 0;
    a.acked_by = None;
    a.acked_t = None;
    serde_json::to_string(&(tr.transition, tr.t, a)).expect("serializes")
}

/// Re-ingests readings.ndjson into a fresh gateway and checks that it
/// reproduces the recorded alerts and report. Never writes to `dir`.
pub fn replay(dir: &Path) -> Result<Replay, ReplayError> {
    if !dir.join(MANIFEST).is_file() {
        return Err(ReplayError::NotARun(dir.to_path_buf()));
    }
    let manifest = Manifest::load(dir)?;
    let mut gateway = Gateway::new(manifest.thresholds.clone());
    persist::for_each_line(&dir.join(READINGS), |r: Reading| gateway.accept_reading(r, f64::from(r.t)))?;

    let replayed: Vec<String> = gateway
        .drain_events()
        .iter()
        .filter_map(|e| match e {
            crate::gateway::Event::Alert(tr) if reading_driven(tr) => Some(alert_key(tr)),
            _ => None,
        })
        .collect();
    let recorded: Vec<AlertTransition> = persist::read_lines(&dir.join(ALERTS))?;
    let recorded: Vec<String> = recorded.iter().filter(|t| reading_driven(t)).map(alert_key).collect();

    let report = report::compute_report(dir)?;
    let report_path = dir.join(REPORT);
    let report_match = match fs::read_to_string(&report_path) {
        Ok(text) => Some(text == report::report_json(&report)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(PersistError::io(&report_path, e).into()),
    };
    Ok(Replay { gateway, report, alerts_match: replayed == recorded, report_match })
}
