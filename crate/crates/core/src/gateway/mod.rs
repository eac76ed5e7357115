//! The master device: frame intake, duplicate filtering, node directory,
//! alerting, hatch estimation and command relay.
//!
//! The gateway is a plain state machine driven by its owner; it never reads
//! a clock. Outbound frames collect in a downlink queue and every visible
//! change is appended to an event buffer the owner drains.

pub mod alerts;
pub mod commands;
pub mod directory;
pub mod estimator;
pub mod events;
pub mod persist;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use alerts::{
    AckError, AlertDirection, AlertEngine, AlertEvent, AlertSource, AlertTransition, Severity, TransitionKind,
};
pub use commands::{Command, CommandError, CommandRecord, CommandStatus, CommandTracker};
pub use directory::{DedupWindow, LinkCounters, Liveness, NodeDirectoryEntry, DEDUP_WINDOW};
pub use estimator::{estimate_hatch, HatchEstimate, HatchEstimator, ETA_WINDOW_S, HATCH_DONE};
pub use events::Event;

use crate::model::{HatchThresholds, ModelError, Reading, SensorKind};
use crate::radio::{DecodeError, Frame, FrameType, BROADCAST_ADDR, FRAME_LEN, GATEWAY_ADDR, HEARTBEAT_FAULT};
use commands::{AckMatch, WINDOW_GAP_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    Decode {
        error: DecodeError,
    },
    WrongDestination {
        dst: u16,
    },
    BadSource {
        src: u16,
    },
    /// Nodes never send commands.
    UnexpectedType,
    UnmatchedAck,
}

impl RejectReason {
    pub fn name(&self) -> &'static str {
        match self {
            RejectReason::Decode { error } => error.reason(),
            RejectReason::WrongDestination { .. } => "wrong_destination",
            RejectReason::BadSource { .. } => "bad_source",
            RejectReason::UnexpectedType => "unexpected_type",
            RejectReason::UnmatchedAck => "unmatched_ack",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Accepted(Reading),
    AckMatched(u64),
    Heartbeat(u16),
    Duplicate,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayCounters {
    pub frames_in: u64,
    pub accepted: u64,
    pub heartbeats: u64,
    pub acks: u64,
    pub duplicates: u64,
    pub rejected: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadingQuery {
    pub kind: Option<SensorKind>,
    pub node: Option<u16>,
    pub from: Option<u32>,
    pub to: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct Gateway {
    thresholds: HatchThresholds,
    readings: Vec<Reading>,
    alerts: AlertEngine,
    estimator: HatchEstimator,
    directory: BTreeMap<u16, NodeDirectoryEntry>,
    dedup: BTreeMap<u16, DedupWindow>,
    commands: CommandTracker,
    downlink: Vec<Frame>,
    events: Vec<Event>,
    counters: GatewayCounters,
    latest_t: BTreeMap<SensorKind, f64>,
}

const DEFAULT_INTERVAL_S: u32 = 60;

impl Gateway {
    pub fn new(thresholds: HatchThresholds) -> Gateway {
        Gateway {
            thresholds,
            readings: Vec::new(),
            alerts: AlertEngine::new(),
            estimator: HatchEstimator::new(),
            directory: BTreeMap::new(),
            dedup: BTreeMap::new(),
            commands: CommandTracker::new(),
            downlink: Vec::new(),
            events: Vec::new(),
            counters: GatewayCounters::default(),
            latest_t: BTreeMap::new(),
        }
    }

    pub fn thresholds(&self) -> &HatchThresholds {
        &self.thresholds
    }

    pub fn set_thresholds(&mut self, thr: HatchThresholds) -> Result<(), ModelError> {
        thr.validate()?;
        self.thresholds = thr;
        Ok(())
    }

    pub fn counters(&self) -> &GatewayCounters {
        &self.counters
    }

    /// Newest reading time per kind.
    pub fn latest_reading_t(&self) -> &BTreeMap<SensorKind, f64> {
        &self.latest_t
    }

    pub fn readings(&self) -> &[Reading] {
        &self.readings
    }

    pub fn alerts(&self) -> &AlertEngine {
        &self.alerts
    }

    pub fn estimator(&self) -> &HatchEstimator {
        &self.estimator
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeDirectoryEntry> {
        self.directory.values()
    }

    pub fn node(&self, addr: u16) -> Option<&NodeDirectoryEntry> {
        self.directory.get(&addr)
    }

    pub fn command(&self, id: u64) -> Option<&CommandRecord> {
        self.commands.get(id)
    }

    pub fn commands(&self) -> impl Iterator<Item = &CommandRecord> {
        self.commands.all()
    }

    pub fn h_at(&self, now: f64) -> f64 {
        self.estimator.h_at(now, &self.thresholds)
    }

    pub fn hatch(&self, now: f64) -> Option<HatchEstimate> {
        self.estimator.estimate(now, &self.thresholds)
    }

    pub fn take_downlink(&mut self) -> Vec<Frame> {
        std::mem::take(&mut self.downlink)
    }

    pub fn drain_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    /// Lets the owner interleave its own events (phase changes) with the
    /// gateway's.
    pub fn push_event(&mut self, event: Event) {
        self.events.push(event);
    }

    /// Adds a node the operator configured; returns false if it was known.
    pub fn register(&mut self, addr: u16, sampling_interval_s: u32, now: f64) -> bool {
        if self.directory.contains_key(&addr) {
            return false;
        }
        let entry = NodeDirectoryEntry::new(addr, sampling_interval_s, now);
        self.events.push(Event::Node(entry.clone()));
        self.directory.insert(addr, entry);
        true
    }

    fn reject(&mut self, reason: RejectReason) -> IngestOutcome {
        *self.counters.rejected.entry(reason.name().to_string()).or_default() += 1;
        IngestOutcome::Rejected(reason)
    }

    /// Decodes and applies one uplink frame. Never panics on any input.
    pub fn ingest(&mut self, bytes: &[u8], now: f64) -> IngestOutcome {
        self.counters.frames_in += 1;
        let frame = match Frame::decode(bytes) {
            Ok(f) => f,
            Err(error) => {
                if bytes.len() == FRAME_LEN {
                    let claimed = u16::from_be_bytes([bytes[3], bytes[4]]);
                    if let Some(entry) = self.directory.get_mut(&claimed) {
                        match error {
                            DecodeError::BadCrc { .. } => entry.counters.crc_bad += 1,
                            _ => entry.counters.decode_bad += 1,
                        }
                    }
                }
                return self.reject(RejectReason::Decode { error });
            }
        };
        if frame.dst != GATEWAY_ADDR {
            return self.reject(RejectReason::WrongDestination { dst: frame.dst });
        }
        if frame.src == GATEWAY_ADDR || frame.src == BROADCAST_ADDR {
            return self.reject(RejectReason::BadSource { src: frame.src });
        }
        if frame.ftype == FrameType::Cmd {
            return self.reject(RejectReason::UnexpectedType);
        }

        self.register(frame.src, DEFAULT_INTERVAL_S, now);
        self.note_contact(frame.src, now);

        match frame.ftype {
            FrameType::Ack => self.ingest_ack(&frame, now),
            FrameType::Data | FrameType::Heartbeat => {
                self.downlink.push(Frame::ack(GATEWAY_ADDR, frame.src, frame.seq, frame.kind_or_code, now as u32, 0));
                let fresh = self.dedup.entry(frame.src).or_default().insert(frame.seq);
                let entry = self.directory.get_mut(&frame.src).expect("registered above");
                if !fresh {
                    entry.counters.duplicate += 1;
                    self.counters.duplicates += 1;
                    return IngestOutcome::Duplicate;
                }
                entry.counters.frames_ok += 1;
                if frame.ftype == FrameType::Heartbeat {
                    entry.battery_centi_pct = Some(frame.payload);
                    entry.sensor_fault = frame.kind_or_code & HEARTBEAT_FAULT != 0;
                    entry.heartbeat_acked = true;
                    self.counters.heartbeats += 1;
                    let snapshot = entry.clone();
                    self.events.push(Event::Node(snapshot));
                    return IngestOutcome::Heartbeat(frame.src);
                }
                let kind = frame.sensor_kind().expect("decode guarantees a known kind");
                let reading =
                    Reading { node: frame.src, kind, seq: frame.seq, t: frame.timestamp, centi: frame.payload };
                self.accept_reading(reading, now);
                IngestOutcome::Accepted(reading)
            }
            FrameType::Cmd => unreachable!("rejected above"),
        }
    }

    fn ingest_ack(&mut self, frame: &Frame, now: f64) -> IngestOutcome {
        let (matched, changed) = self.commands.match_ack(frame, now);
        if let Some(rec) = changed {
            if let Some(entry) = self.directory.get_mut(&rec.node) {
                entry.counters.frames_ok += 1;
                if rec.status == CommandStatus::Acked {
                    match rec.command {
                        Command::SetInterval(s) => entry.sampling_interval_s = s,
                        Command::Wake => entry.sleep_until_t = None,
                        Command::Sleep(_) => {}
                    }
                }
            }
            self.counters.acks += 1;
            self.events.push(Event::Command(rec));
        }
        match matched {
            AckMatch::Resolved(id) => IngestOutcome::AckMatched(id),
            AckMatch::Repeat(_) => {
                self.counters.duplicates += 1;
                if let Some(entry) = self.directory.get_mut(&frame.src) {
                    entry.counters.duplicate += 1;
                }
                IngestOutcome::Duplicate
            }
            AckMatch::Unmatched => self.reject(RejectReason::UnmatchedAck),
        }
    }

    /// Bookkeeping for any well-formed frame from `addr`: liveness, silence
    /// clearing and, on a new contact window, pending command delivery.
    fn note_contact(&mut self, addr: u16, now: f64) {
        let entry = self.directory.get_mut(&addr).expect("registered");
        let new_window = entry.last_seen_t.is_none_or(|t| now - t > WINDOW_GAP_S);
        entry.last_seen_t = Some(now);
        if entry.sleep_until_t.is_some_and(|s| now >= s) {
            entry.sleep_until_t = None;
        }
        let was = entry.state;
        entry.state = Liveness::Active;
        if was != Liveness::Active {
            let snapshot = entry.clone();
            self.events.push(Event::Node(snapshot));
        }
        if let Some(tr) = self.alerts.clear_silence(addr, now as u32) {
            self.events.push(Event::Alert(tr));
        }
        if new_window {
            let (frames, changed) = self.commands.on_window(addr, now);
            for f in &frames {
                if f.kind_or_code == crate::radio::CMD_SLEEP {
                    let entry = self.directory.get_mut(&addr).expect("registered");
                    entry.sleep_until_t = Some(now + f64::from(f.payload));
                }
            }
            self.downlink.extend(frames);
            self.events.extend(changed.into_iter().map(Event::Command));
        }
    }

    /// Stores a validated reading and runs alerting and estimation on it.
    /// Replay feeds persisted readings straight in here.
    pub fn accept_reading(&mut self, reading: Reading, now: f64) {
        if !self.directory.contains_key(&reading.node) {
            self.register(reading.node, DEFAULT_INTERVAL_S, now);
        }
        if let Some(entry) = self.directory.get_mut(&reading.node) {
            entry.kinds.insert(reading.kind);
        }
        let t = f64::from(reading.t);
        self.latest_t.entry(reading.kind).and_modify(|x| *x = x.max(t)).or_insert(t);
        let at = self.readings.partition_point(|r| r.t <= reading.t);
        self.readings.insert(at, reading);
        self.counters.accepted += 1;
        self.events.push(Event::Reading(reading));
        let transitions = self.alerts.evaluate(&reading, &self.thresholds);
        self.events.extend(transitions.into_iter().map(Event::Alert));
        self.estimator.observe(&reading, &self.thresholds);
        if let Some(est) = self.estimator.estimate(f64::from(reading.t), &self.thresholds) {
            self.events.push(Event::Hatch(est));
        }
    }

    pub fn dispatch_command(&mut self, addr: u16, command: Command, now: f64) -> Result<CommandRecord, CommandError> {
        if !self.directory.contains_key(&addr) {
            return Err(CommandError::NotFound(addr));
        }
        command.validate()?;
        let rec = self.commands.issue(addr, command, now);
        self.events.push(Event::Command(rec.clone()));
        Ok(rec)
    }

    pub fn ack_alert(&mut self, id: u64, who: &str, now: f64) -> Result<AlertEvent, AckError> {
        let tr = self.alerts.ack(id, who, now as u32)?;
        let alert = tr.alert.clone();
        self.events.push(Event::Alert(tr));
        Ok(alert)
    }

    /// Raises NodeSilent for overdue nodes and refreshes inferred liveness.
    pub fn detect_silence(&mut self, now: f64) -> Vec<AlertTransition> {
        let mut out = Vec::new();
        let t = now as u32;
        for entry in self.directory.values_mut() {
            let state = if entry.is_overdue(now) {
                if let Some(tr) = self.alerts.raise_silence(entry.addr, t) {
                    out.push(tr);
                }
                Liveness::Silent
            } else if entry.sleep_until_t.is_some_and(|s| now < s) {
                Liveness::Sleeping
            } else {
                Liveness::Active
            };
            if state != entry.state {
                entry.state = state;
                self.events.push(Event::Node(entry.clone()));
            }
        }
        self.events.extend(out.iter().cloned().map(Event::Alert));
        out
    }

    pub fn query_readings(&self, q: &ReadingQuery) -> Vec<Reading> {
        let start = q.from.map_or(0, |from| self.readings.partition_point(|r| r.t < from));
        self.readings[start..]
            .iter()
            .take_while(|r| q.to.is_none_or(|to| r.t <= to))
            .filter(|r| q.kind.is_none_or(|k| r.kind == k) && q.node.is_none_or(|n| r.node == n))
            .copied()
            .collect()
    }
}
