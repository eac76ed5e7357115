//! Discrete-event simulation of one hatching run: plant, nodes, radio
//! links, gateway and the lifecycle, all on one millisecond clock.
//!
//! At equal times events fire in a fixed order: plant step, frame
//! deliveries, node ticks, gateway tick. Each random source has its own
//! seeded stream, so the trajectory depends only on config and seed.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::config::{Attestations, Mode, RunConfig};
use crate::gateway::alerts::{AckError, AlertEvent};
use crate::gateway::persist::{PersistError, RunWriter};
use crate::gateway::{Command, CommandError, CommandRecord, Event, Gateway};
use crate::model::{validate_culture, HatchThresholds, ModelError};
use crate::node::Node;
use crate::parmi::{
    gate_reasons, AdvanceError, GateEvidence, NodeEvidence, Orchestrator, PhaseRecord, RunOutcome, RunPhase,
};
use crate::plant::{self, Actuator, PlantParams, PlantState};
use crate::radio::{self, Direction, Frame, LinkParams, SimMillis, Transmission, BROADCAST_ADDR};
use crate::report::NodeSummary;
use crate::rng::{self, SimRng};

pub const GATEWAY_TICK_MS: SimMillis = 1000;
const FLUSH_EVERY_MS: SimMillis = 3_600_000;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Kind {
    PlantStep,
    Uplink { bytes: Vec<u8> },
    Downlink { dst: u16, bytes: Vec<u8> },
    NodeTick { idx: usize },
    GatewayTick,
}

impl Kind {
    fn priority(&self) -> u8 {
        match self {
            Kind::PlantStep => 0,
            Kind::Uplink { .. } | Kind::Downlink { .. } => 1,
            Kind::NodeTick { .. } => 2,
            Kind::GatewayTick => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Scheduled {
    at: SimMillis,
    priority: u8,
    seq: u64,
    kind: Kind,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.priority, self.seq).cmp(&(other.at, other.priority, other.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Drive the run lifecycle. Without it, nodes power up at t = 0 with
    /// the aerator on and the run continues until the caller stops.
    pub lifecycle: bool,
    /// Advance phases automatically from the attestations (batch) instead
    /// of waiting for an operator (live).
    pub auto_advance: bool,
    pub trace_nodes: bool,
}

impl SimOptions {
    pub fn for_mode(mode: Mode) -> SimOptions {
        SimOptions { lifecycle: true, auto_advance: mode == Mode::Batch, trace_nodes: false }
    }

    /// Plant, nodes and gateway only; used by measurement harnesses.
    pub fn free_running() -> SimOptions {
        SimOptions { lifecycle: false, auto_advance: false, trace_nodes: false }
    }
}

type Sink = Box<dyn FnMut(&Event) + Send + Sync>;

pub struct Simulation {
    cfg: RunConfig,
    options: SimOptions,
    thresholds: HatchThresholds,
    params: PlantParams,
    plant: PlantState,
    nodes: Vec<Node>,
    node_due: Vec<Option<SimMillis>>,
    powered: bool,
    gateway: Gateway,
    orch: Orchestrator,
    attest: Attestations,
    stop_requested: bool,
    last_blocked: Option<(RunPhase, Vec<String>)>,
    outcome: Option<RunOutcome>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_seq: u64,
    now_ms: SimMillis,
    plant_rng: SimRng,
    up_rng: SimRng,
    down_rng: SimRng,
    link: LinkParams,
    truth_crossing_t: Option<f64>,
    writer: Option<RunWriter>,
    last_flush_ms: SimMillis,
    sink: Option<Sink>,
}

impl Simulation {
    pub fn new(cfg: RunConfig, seed: u64, options: SimOptions) -> Simulation {
        let thresholds = cfg.thresholds();
        let params = cfg.plant.params();
        let plant = cfg.plant.initial_state();
        let link = cfg.link;
        let attest = cfg.attestations;
        let mut sim = Simulation {
            options,
            gateway: Gateway::new(thresholds.clone()),
            thresholds,
            params,
            plant,
            nodes: Vec::new(),
            node_due: Vec::new(),
            powered: false,
            orch: Orchestrator::new(0.0),
            attest,
            stop_requested: false,
            last_blocked: None,
            outcome: None,
            queue: BinaryHeap::new(),
            next_seq: 0,
            now_ms: 0,
            plant_rng: rng::stream(seed, rng::STREAM_PLANT),
            up_rng: rng::stream(seed, rng::STREAM_UPLINK),
            down_rng: rng::stream(seed, rng::STREAM_DOWNLINK),
            link,
            truth_crossing_t: None,
            writer: None,
            last_flush_ms: 0,
            sink: None,
            cfg,
        };
        let dt_ms = sim.plant_dt_ms();
        sim.schedule(dt_ms, Kind::PlantStep);
        sim.schedule(0, Kind::GatewayTick);
        if options.lifecycle {
            let t0 = PhaseRecord::Transition {
                from: None,
                to: RunPhase::CulturePrep,
                t: 0.0,
                evidence: serde_json::Value::Null,
            };
            sim.gateway.push_event(Event::Phase(t0));
        } else {
            sim.plant = plant::set_actuator(&sim.plant, Actuator::Aerator(true));
            sim.power_nodes(0);
        }
        sim
    }

    /// Persist every event into `writer` from now on.
    pub fn attach_writer(&mut self, writer: RunWriter) {
        self.writer = Some(writer);
    }

    /// Also hand every event to `sink` (live subscribers).
    pub fn set_sink(&mut self, sink: Sink) {
        self.sink = Some(sink);
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn now_ms(&self) -> SimMillis {
        self.now_ms
    }

    pub fn now_s(&self) -> f64 {
        self.now_ms as f64 / 1000.0
    }

    pub fn plant(&self) -> &PlantState {
        &self.plant
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn gateway_mut(&mut self) -> &mut Gateway {
        &mut self.gateway
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orch
    }

    pub fn outcome(&self) -> Option<RunOutcome> {
        self.outcome
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }

    /// First plant step at which the true hatch fraction reached 0.999.
    pub fn truth_crossing_t(&self) -> Option<f64> {
        self.truth_crossing_t
    }

    pub fn set_link(&mut self, link: LinkParams) {
        self.link = link;
    }

    fn plant_dt_ms(&self) -> SimMillis {
        ((self.params.dt_s * 1000.0).round() as SimMillis).max(1)
    }

    fn schedule(&mut self, at: SimMillis, kind: Kind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Scheduled { at, priority: kind.priority(), seq, kind }));
    }

    fn power_nodes(&mut self, at: SimMillis) {
        if self.powered {
            return;
        }
        self.powered = true;
        let now_s = at as f64 / 1000.0;
        for (idx, cfg) in self.cfg.nodes.clone().iter().enumerate() {
            let mut node = Node::new(cfg, at);
            if self.options.trace_nodes {
                node.enable_trace();
            }
            self.gateway.register(cfg.addr, node.sampling_interval_s, now_s);
            self.nodes.push(node);
            self.node_due.push(Some(at));
            self.schedule(at, Kind::NodeTick { idx });
        }
    }

    /// Processes every event up to and including `until_ms`, or until the
    /// run finishes.
    pub fn run_until(&mut self, until_ms: SimMillis) -> Result<(), PersistError> {
        while !self.is_finished() {
            match self.queue.peek() {
                Some(Reverse(ev)) if ev.at <= until_ms => {}
                _ => break,
            }
            self.step()?;
        }
        if !self.is_finished() {
            self.now_ms = self.now_ms.max(until_ms);
        }
        Ok(())
    }

    /// Runs to completion. Only meaningful with the lifecycle enabled.
    pub fn run_to_end(&mut self) -> Result<RunOutcome, PersistError> {
        while !self.is_finished() {
            if self.queue.is_empty() {
                break;
            }
            self.step()?;
        }
        Ok(self.outcome.unwrap_or(RunOutcome::GateBlocked))
    }

    pub fn step(&mut self) -> Result<(), PersistError> {
        let Some(Reverse(ev)) = self.queue.pop() else {
            return Ok(());
        };
        self.now_ms = ev.at;
        match ev.kind {
            Kind::PlantStep => self.plant_step(),
            Kind::Uplink { bytes } => self.deliver_uplink(&bytes)?,
            Kind::Downlink { dst, bytes } => self.deliver_downlink(dst, &bytes),
            Kind::NodeTick { idx } => self.node_tick(idx),
            Kind::GatewayTick => self.gateway_tick()?,
        }
        self.pump_events()
    }

    fn plant_step(&mut self) {
        self.plant = plant::step(&self.plant, &self.params, &mut self.plant_rng);
        if self.truth_crossing_t.is_none() && self.plant.hatch_fraction >= crate::gateway::HATCH_DONE {
            self.truth_crossing_t = Some(self.plant.t);
        }
        let dt = self.plant_dt_ms();
        self.schedule(self.now_ms + dt, Kind::PlantStep);
    }

    fn node_tick(&mut self, idx: usize) {
        if self.node_due[idx] != Some(self.now_ms) {
            return;
        }
        let mut outbox = Vec::new();
        let next = self.nodes[idx].tick(self.now_ms, &self.plant, &mut outbox);
        self.node_due[idx] = next;
        if let Some(at) = next {
            self.schedule(at, Kind::NodeTick { idx });
        }
        let up = self.link.channel(Direction::Up);
        for out in outbox {
            let bytes = out.frame.encode().expect("nodes only build valid frames");
            if let Transmission::Delivered { arrive_ms, bytes, .. } =
                radio::transmit(&up, &bytes, out.depart_ms, &mut self.up_rng)
            {
                self.schedule(arrive_ms, Kind::Uplink { bytes });
            }
        }
    }

    fn deliver_uplink(&mut self, bytes: &[u8]) -> Result<(), PersistError> {
        let now_s = self.now_s();
        if let Some(w) = self.writer.as_mut() {
            w.write_frame(now_s, true, bytes)?;
        }
        self.gateway.ingest(bytes, now_s);
        self.send_downlink()
    }

    fn send_downlink(&mut self) -> Result<(), PersistError> {
        let down = self.link.channel(Direction::Down);
        for frame in self.gateway.take_downlink() {
            let bytes = frame.encode().expect("gateway only builds valid frames");
            if let Some(w) = self.writer.as_mut() {
                w.write_frame(self.now_ms as f64 / 1000.0, false, &bytes)?;
            }
            if let Transmission::Delivered { arrive_ms, bytes, .. } =
                radio::transmit(&down, &bytes, self.now_ms, &mut self.down_rng)
            {
                self.schedule(arrive_ms, Kind::Downlink { dst: frame.dst, bytes });
            }
        }
        Ok(())
    }

    fn deliver_downlink(&mut self, dst: u16, bytes: &[u8]) {
        let Ok(frame) = Frame::decode(bytes) else {
            return;
        };
        let now = self.now_ms;
        for node in self.nodes.iter_mut() {
            if dst == node.addr || dst == BROADCAST_ADDR {
                node.receive(now, &frame);
            }
        }
    }

    fn evidence(&self) -> GateEvidence {
        let now = self.now_s();
        GateEvidence {
            culture_prepared: self.attest.culture_prepared,
            culture: validate_culture(&self.cfg.culture, &self.thresholds).ok(),
            aerator_on: self.attest.aerator_on && self.plant.aerator_on,
            nodes: self
                .gateway
                .nodes()
                .map(|n| NodeEvidence {
                    addr: n.addr,
                    kinds: n.kinds.iter().copied().collect(),
                    heartbeat_acked: n.heartbeat_acked,
                })
                .collect(),
            latest_reading_t: self.gateway.latest_reading_t().clone(),
            h_est: self.gateway.h_at(now),
            max_duration_s: self.cfg.max_duration_s,
            operator_stop: self.stop_requested,
        }
    }

    fn enter(&mut self, from: RunPhase, to: RunPhase, evidence: &GateEvidence) {
        let t = self.now_s();
        let mut digest = serde_json::to_value(evidence).expect("evidence serializes");
        if let Some(obj) = digest.as_object_mut() {
            // the reading map is bulky and fully recoverable from readings.ndjson
            obj.remove("latest_reading_t");
        }
        let rec = PhaseRecord::Transition { from: Some(from), to, t, evidence: digest };
        self.gateway.push_event(Event::Phase(rec));
        self.last_blocked = None;
        match to {
            RunPhase::AerationOn => {
                if self.attest.aerator_on {
                    self.plant = plant::set_actuator(&self.plant, Actuator::Aerator(true));
                }
            }
            RunPhase::NodeSetup => self.power_nodes(self.now_ms),
            RunPhase::Analysis => self.finish(RunOutcome::Completed),
            _ => {}
        }
    }

    /// Tries to move to the next phase with the current evidence.
    pub fn try_advance(&mut self) -> Result<RunPhase, AdvanceError> {
        let from = self.orch.current();
        let ev = self.evidence();
        let now = self.now_s();
        let to = self.orch.advance(&ev, now)?;
        self.enter(from, to, &ev);
        Ok(to)
    }

    /// Operator-driven advance (live mode) with fresh confirmations.
    pub fn operator_advance(&mut self, confirm: Attestations) -> Result<RunPhase, AdvanceError> {
        self.attest = confirm;
        if self.orch.current() == RunPhase::AerationOn && confirm.aerator_on {
            self.plant = plant::set_actuator(&self.plant, Actuator::Aerator(true));
        }
        let out = self.try_advance();
        if let Err(AdvanceError::GateBlocked { phase, reasons }) = &out {
            self.record_blocked(*phase, reasons.clone());
        }
        let _ = self.pump_events();
        out
    }

    /// Operator stop: the run moves to analysis at the next opportunity.
    pub fn request_stop(&mut self) {
        self.stop_requested = true;
        if self.orch.current() == RunPhase::Monitoring {
            let _ = self.try_advance();
            let _ = self.pump_events();
        }
    }

    /// Ends the run now. From Monitoring this is an operator stop; earlier
    /// phases end blocked at their gate.
    pub fn terminate(&mut self) -> Result<RunOutcome, PersistError> {
        if let Some(outcome) = self.outcome {
            return Ok(outcome);
        }
        let phase = self.orch.current();
        if phase == RunPhase::Monitoring {
            self.request_stop();
        }
        if self.outcome.is_none() {
            let reasons = gate_reasons(phase, &self.evidence(), self.now_s());
            self.record_blocked(phase, reasons);
            self.finish(RunOutcome::GateBlocked);
        }
        self.pump_events()?;
        Ok(self.outcome.expect("finished above"))
    }

    pub fn ack_alert(&mut self, id: u64, who: &str) -> Result<AlertEvent, AckError> {
        let now = self.now_s();
        let out = self.gateway.ack_alert(id, who, now);
        let _ = self.pump_events();
        out
    }

    pub fn dispatch_command(&mut self, addr: u16, command: Command) -> Result<CommandRecord, CommandError> {
        let now = self.now_s();
        let out = self.gateway.dispatch_command(addr, command, now);
        let _ = self.pump_events();
        out
    }

    pub fn set_thresholds(&mut self, thr: HatchThresholds) -> Result<(), ModelError> {
        self.gateway.set_thresholds(thr.clone())?;
        self.thresholds = thr;
        Ok(())
    }

    fn record_blocked(&mut self, phase: RunPhase, reasons: Vec<String>) {
        if self.last_blocked.as_ref() == Some(&(phase, reasons.clone())) {
            return;
        }
        self.last_blocked = Some((phase, reasons.clone()));
        let t = self.now_s();
        self.gateway.push_event(Event::Phase(PhaseRecord::Blocked { phase, t, reasons }));
    }

    fn gateway_tick(&mut self) -> Result<(), PersistError> {
        let now = self.now_s();
        self.gateway.detect_silence(now);
        if self.options.lifecycle {
            self.lifecycle_tick();
        }
        if let Some(adv) = self.orch.feeding_advisory(now, 0.0, &self.thresholds) {
            let rec = PhaseRecord::Advisory { t: adv.t, elapsed_s: adv.elapsed_s, message: adv.message };
            self.gateway.push_event(Event::Phase(rec));
        }
        if self.now_ms - self.last_flush_ms >= FLUSH_EVERY_MS {
            self.last_flush_ms = self.now_ms;
            if let Some(w) = self.writer.as_mut() {
                w.flush()?;
            }
        }
        if !self.is_finished() {
            self.schedule(self.now_ms + GATEWAY_TICK_MS, Kind::GatewayTick);
        }
        self.send_downlink()
    }

    fn lifecycle_tick(&mut self) {
        let phase = self.orch.current();
        if phase == RunPhase::Analysis {
            return;
        }
        let now = self.now_s();
        if self.orch.entered_t(phase).is_some_and(|t| now <= t) {
            return;
        }
        let ev = self.evidence();
        let auto = self.options.auto_advance || phase == RunPhase::Monitoring;
        if auto {
            if gate_reasons(phase, &ev, now).is_empty() {
                match self.try_advance() {
                    Ok(_) => return,
                    Err(AdvanceError::GateBlocked { phase, reasons }) => self.record_blocked(phase, reasons),
                    Err(_) => {}
                }
            } else if phase != RunPhase::Monitoring {
                self.record_blocked(phase, gate_reasons(phase, &ev, now));
                // attestations cannot change in batch mode
                if self.options.auto_advance && matches!(phase, RunPhase::CulturePrep | RunPhase::AerationOn) {
                    self.finish(RunOutcome::GateBlocked);
                    return;
                }
            }
        }
        if self.orch.current() != RunPhase::Analysis && now >= self.cfg.max_duration_s && phase != RunPhase::Monitoring
        {
            let reasons = gate_reasons(phase, &ev, now);
            self.record_blocked(phase, reasons);
            self.finish(RunOutcome::GateBlocked);
        }
    }

    pub fn node_summaries(&self) -> Vec<NodeSummary> {
        self.nodes
            .iter()
            .map(|n| {
                let (used, battery) = n.energy_report(self.now_ms);
                NodeSummary {
                    addr: n.addr,
                    energy_used_mah: used,
                    battery_centi_pct: battery,
                    time_in_states_ms: n.time_in_states_ms(),
                    stats: n.stats(),
                    link: self.gateway.node(n.addr).map(|e| e.counters).unwrap_or_default(),
                }
            })
            .collect()
    }

    fn finish(&mut self, outcome: RunOutcome) {
        if self.outcome.is_some() {
            return;
        }
        self.outcome = Some(outcome);
        let rec = PhaseRecord::RunEnd { t: self.now_s(), outcome, nodes: self.node_summaries() };
        self.gateway.push_event(Event::Phase(rec));
    }

    fn pump_events(&mut self) -> Result<(), PersistError> {
        let events = self.gateway.drain_events();
        if events.is_empty() {
            return Ok(());
        }
        for ev in &events {
            if let Some(w) = self.writer.as_mut() {
                w.write_event(ev)?;
            }
            if let Some(sink) = self.sink.as_mut() {
                sink(ev);
            }
        }
        Ok(())
    }

    /// Flushes and releases the run writer.
    pub fn close(&mut self) -> Result<(), PersistError> {
        self.pump_events()?;
        if let Some(mut w) = self.writer.take() {
            w.flush()?;
        }
        Ok(())
    }
}
