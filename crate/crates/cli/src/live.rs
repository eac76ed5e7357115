//! Paced simulation thread for live runs.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, RwLock, RwLockWriteGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use hatchsens_core::gateway::persist::{Manifest, PersistError};
use hatchsens_core::report::{self, Report};
use hatchsens_core::{RunOutcome, Simulation};

use crate::api::{AppState, Control};

/// Longest stretch of sim time processed under one write lock, so readers
/// are never starved at high acceleration.
const CHUNK_MS: u64 = 60_000;
const POLL: Duration = Duration::from_millis(10);

pub struct LiveRun {
    pub state: AppState,
    shutdown: Arc<AtomicBool>,
    handle: JoinHandle<Result<(RunOutcome, Report), PersistError>>,
}

impl LiveRun {
    /// Starts the simulation thread. `sim` must already have its writer
    /// attached; the report is written into `dir` when the run ends.
    pub fn spawn(mut sim: Simulation, manifest: Manifest, accel: f64, dir: PathBuf) -> LiveRun {
        let (tx, rx) = mpsc::channel();
        let (events, _) = tokio::sync::broadcast::channel(crate::api::EVENT_BUFFER);
        let sink = events.clone();
        sim.set_sink(Box::new(move |ev| {
            let _ = sink.send(ev.clone());
        }));
        let sim = Arc::new(RwLock::new(sim));
        let state = AppState::live(Arc::clone(&sim), tx, manifest, events);
        let shutdown = Arc::new(AtomicBool::new(false));
        let stop = Arc::clone(&shutdown);
        let handle = thread::Builder::new()
            .name("hatchsens-sim".into())
            .spawn(move || drive(&sim, &rx, accel, &stop, dir))
            .expect("spawn simulation thread");
        LiveRun { state, shutdown, handle }
    }

    /// Asks the run to end at its current phase.
    pub fn shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }

    pub fn is_done(&self) -> bool {
        self.handle.is_finished()
    }

    pub fn join(self) -> Result<(RunOutcome, Report), PersistError> {
        self.handle.join().expect("simulation thread panicked")
    }
}

fn lock(sim: &RwLock<Simulation>) -> RwLockWriteGuard<'_, Simulation> {
    sim.write().unwrap_or_else(|e| e.into_inner())
}

fn apply(sim: &mut Simulation, msg: Control) {
    match msg {
        Control::Ack { id, who, reply } => {
            let _ = reply.send(sim.ack_alert(id, &who));
        }
        Control::Command { addr, command, reply } => {
            let _ = reply.send(sim.dispatch_command(addr, command));
        }
        Control::Thresholds { thr, reply } => {
            let _ = reply.send(sim.set_thresholds(thr));
        }
        Control::Advance { confirm, reply } => {
            let _ = reply.send(sim.operator_advance(confirm));
        }
        // before monitoring there is nothing to analyse, so a stop ends the
        // run blocked at the current gate
        Control::Stop { reply } => {
            let _ = sim.terminate();
            let _ = reply.send(sim.orchestrator().current());
        }
    }
}

fn drive(
    sim: &RwLock<Simulation>,
    rx: &mpsc::Receiver<Control>,
    accel: f64,
    shutdown: &AtomicBool,
    dir: PathBuf,
) -> Result<(RunOutcome, Report), PersistError> {
    let start = Instant::now();
    let outcome = loop {
        match rx.recv_timeout(POLL) {
            Ok(msg) => apply(&mut lock(sim), msg),
            Err(RecvTimeoutError::Timeout) => {}
            // every sender gone means nobody can steer the run any more
            Err(RecvTimeoutError::Disconnected) => shutdown.store(true, Ordering::SeqCst),
        }
        while let Ok(msg) = rx.try_recv() {
            apply(&mut lock(sim), msg);
        }
        if shutdown.load(Ordering::SeqCst) {
            break lock(sim).terminate()?;
        }
        let target = (start.elapsed().as_secs_f64() * accel * 1000.0) as u64;
        loop {
            let mut s = lock(sim);
            let step_to = target.min(s.now_ms() + CHUNK_MS);
            s.run_until(step_to)?;
            if s.is_finished() || step_to >= target {
                break;
            }
        }
        if let Some(outcome) = lock(sim).outcome() {
            break outcome;
        }
    };
    lock(sim).close()?;
    let report = report::finalize_report(&dir)?;
    Ok((outcome, report))
}
