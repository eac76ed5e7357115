//! Virtual sensor node: duty-cycled sampling, 10-bit ADC path, the four
//! transceiver states, stop-and-wait retransmission and energy accounting.
//!
//! One wake cycle is `Sleep -> Idle -> Transmit -> Receive -> Sleep`. Frames
//! that are still unacknowledged when the receive window closes are resent
//! in a short retry wake `ack_timeout_ms` later, up to `max_retransmits`
//! times. Downlink frames are only heard while the radio is awake.
//! Command acknowledgements ride along with the next transmit burst.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{round_half_away, SensorKind};
use crate::plant::{observe, PlantState};
use crate::radio::{Frame, FrameType, SimMillis, ACK_ERROR, BROADCAST_ADDR, CMD_SET_INTERVAL, CMD_SLEEP, CMD_WAKE};

pub const ADC_BITS: u32 = 10;
pub const ADC_MAX: u16 = (1 << ADC_BITS) - 1;
pub const MIN_INTERVAL_S: u32 = 5;
pub const MAX_INTERVAL_S: u32 = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("sensor fault: reading is NaN")]
pub struct SensorFault;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalRange {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Calibration {
    pub temperature: CalRange,
    pub ph: CalRange,
    pub o2: CalRange,
    pub humidity: CalRange,
    pub light: CalRange,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            temperature: CalRange { lo: 0.0, hi: 50.0 },
            ph: CalRange { lo: 0.0, hi: 14.0 },
            o2: CalRange { lo: 0.0, hi: 20.0 },
            humidity: CalRange { lo: 0.0, hi: 100.0 },
            light: CalRange { lo: 0.0, hi: 10_000.0 },
        }
    }
}

impl Calibration {
    pub fn range(&self, kind: SensorKind) -> CalRange {
        match kind {
            SensorKind::TemperatureC => self.temperature,
            SensorKind::Ph => self.ph,
            SensorKind::DissolvedO2MgPerL => self.o2,
            SensorKind::HumidityPct => self.humidity,
            SensorKind::LightLux => self.light,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for kind in SensorKind::ALL {
            let r = self.range(kind);
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo < r.hi) {
                return Err(format!("calibration range for {kind} must satisfy lo < hi"));
            }
        }
        Ok(())
    }
}

pub fn adc_sample(x: f64, cal: CalRange) -> Result<u16, SensorFault> {
    if x.is_nan() {
        return Err(SensorFault);
    }
    let frac = (x.clamp(cal.lo, cal.hi) - cal.lo) / (cal.hi - cal.lo);
    Ok(round_half_away(frac * f64::from(ADC_MAX)) as u16)
}

pub fn counts_to_centi(counts: u16, cal: CalRange) -> i32 {
    let value = cal.lo + f64::from(counts) / f64::from(ADC_MAX) * (cal.hi - cal.lo);
    round_half_away(value * 100.0) as i32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadioState {
    Transmit,
    Receive,
    Idle,
    Sleep,
}

impl RadioState {
    fn index(self) -> usize {
        match self {
            RadioState::Transmit => 0,
            RadioState::Receive => 1,
            RadioState::Idle => 2,
            RadioState::Sleep => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyModel {
    pub tx_ma: f64,
    pub rx_ma: f64,
    pub idle_ma: f64,
    pub sleep_ma: f64,
    pub supply_v: f64,
    pub capacity_mah: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel { tx_ma: 45.0, rx_ma: 19.0, idle_ma: 2.0, sleep_ma: 0.01, supply_v: 3.3, capacity_mah: 1000.0 }
    }
}

impl EnergyModel {
    pub fn current_ma(&self, state: RadioState) -> f64 {
        match state {
            RadioState::Transmit => self.tx_ma,
            RadioState::Receive => self.rx_ma,
            RadioState::Idle => self.idle_ma,
            RadioState::Sleep => self.sleep_ma,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.tx_ma > self.rx_ma
            && self.rx_ma > self.idle_ma
            && self.idle_ma > self.sleep_ma
            && self.sleep_ma > 0.0)
        {
            return Err("energy model must satisfy tx > rx > idle > sleep > 0".into());
        }
        if !(self.capacity_mah.is_finite() && self.capacity_mah > 0.0) {
            return Err("battery capacity must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeTiming {
    /// Wake-up and sensor read time spent in Idle.
    pub wake_ms: u64,
    pub tx_ms_per_frame: u64,
    pub rx_window_ms: u64,
    pub ack_timeout_ms: u64,
    pub max_retransmits: u32,
    /// A heartbeat goes out every this many sampling cycles.
    pub heartbeat_every: u32,
}

impl Default for NodeTiming {
    fn default() -> Self {
        NodeTiming {
            wake_ms: 10,
            tx_ms_per_frame: 2,
            rx_window_ms: 180,
            ack_timeout_ms: 20,
            max_retransmits: 3,
            heartbeat_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub addr: u16,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<SensorKind>,
    #[serde(default = "default_interval")]
    pub sampling_interval_s: u32,
    #[serde(default)]
    pub energy: EnergyModel,
    #[serde(default)]
    pub timing: NodeTiming,
    #[serde(default)]
    pub calibration: Calibration,
}

fn default_interval() -> u32 {
    60
}

fn default_kinds() -> Vec<SensorKind> {
    SensorKind::ALL.to_vec()
}

impl NodeConfig {
    pub fn all_kinds(addr: u16) -> NodeConfig {
        NodeConfig {
            addr,
            kinds: SensorKind::ALL.to_vec(),
            sampling_interval_s: 60,
            energy: EnergyModel::default(),
            timing: NodeTiming::default(),
            calibration: Calibration::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    /// Readings originated (one DATA frame each, retransmits excluded).
    pub data_sent: u64,
    pub data_acked: u64,
    /// Readings abandoned after the last retransmit went unanswered.
    pub data_lost: u64,
    pub frames_tx: u64,
    pub retransmits: u64,
    pub heartbeats: u64,
    pub commands_handled: u64,
    pub sensor_faults: u64,
    pub downlink_missed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outgoing {
    pub depart_ms: SimMillis,
    pub frame: Frame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pending {
    frame: Frame,
    tries: u32,
}

#[derive(Debug, Clone, PartialEq)]
struct EnergyAccount {
    used_mah: f64,
    since_ms: SimMillis,
    per_state_ms: [u64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub addr: u16,
    pub radio_state: RadioState,
    pub sampling_interval_s: u32,
    pub seq: u16,
    kinds: Vec<SensorKind>,
    energy_model: EnergyModel,
    timing: NodeTiming,
    calibration: Calibration,
    next_wake_ms: SimMillis,
    next_sample_ms: SimMillis,
    last_sample_ms: Option<SimMillis>,
    wake_commanded: bool,
    pending: Vec<Pending>,
    tx_queue: Vec<Frame>,
    deferred_acks: Vec<Frame>,
    last_command: Option<(u16, Frame)>,
    fault_flag: bool,
    cycles: u64,
    exhausted: bool,
    energy: EnergyAccount,
    stats: NodeStats,
    trace: Option<Vec<(SimMillis, RadioState)>>,
}

impl Node {
    /// A powered node asleep until `first_wake_ms`.
    pub fn new(cfg: &NodeConfig, first_wake_ms: SimMillis) -> Node {
        let mut kinds = cfg.kinds.clone();
        kinds.sort();
        kinds.dedup();
        Node {
            addr: cfg.addr,
            radio_state: RadioState::Sleep,
            sampling_interval_s: cfg.sampling_interval_s.clamp(MIN_INTERVAL_S, MAX_INTERVAL_S),
            seq: 0,
            kinds,
            energy_model: cfg.energy,
            timing: cfg.timing,
            calibration: cfg.calibration,
            next_wake_ms: first_wake_ms,
            next_sample_ms: first_wake_ms,
            last_sample_ms: None,
            wake_commanded: false,
            pending: Vec::new(),
            tx_queue: Vec::new(),
            deferred_acks: Vec::new(),
            last_command: None,
            fault_flag: false,
            cycles: 0,
            exhausted: false,
            energy: EnergyAccount { used_mah: 0.0, since_ms: first_wake_ms, per_state_ms: [0; 4] },
            stats: NodeStats::default(),
            trace: None,
        }
    }

    /// Records every radio state change from now on.
    pub fn enable_trace(&mut self) {
        self.trace = Some(vec![(self.energy.since_ms, self.radio_state)]);
    }

    pub fn trace(&self) -> Option<&[(SimMillis, RadioState)]> {
        self.trace.as_deref()
    }

    pub fn kinds(&self) -> &[SensorKind] {
        &self.kinds
    }

    pub fn next_wake_ms(&self) -> SimMillis {
        self.next_wake_ms
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn energy_model(&self) -> &EnergyModel {
        &self.energy_model
    }

    /// Milliseconds spent in each state up to the last transition, in the
    /// order transmit, receive, idle, sleep.
    pub fn time_in_states_ms(&self) -> [u64; 4] {
        self.energy.per_state_ms
    }

    fn used_at(&self, now: SimMillis) -> f64 {
        let open = now.saturating_sub(self.energy.since_ms) as f64;
        self.energy.used_mah + self.energy_model.current_ma(self.radio_state) * open / 3_600_000.0
    }

    /// `(mAh used, centi-percent remaining)` as of `now`.
    pub fn energy_report(&self, now: SimMillis) -> (f64, i32) {
        let used = self.used_at(now);
        let cap = self.energy_model.capacity_mah;
        let centi = round_half_away(100.0 * (cap - used) / cap * 100.0).max(0.0);
        (used, centi as i32)
    }

    fn transition(&mut self, to: RadioState, now: SimMillis) {
        let dt = now.saturating_sub(self.energy.since_ms);
        self.energy.used_mah += self.energy_model.current_ma(self.radio_state) * dt as f64 / 3_600_000.0;
        self.energy.per_state_ms[self.radio_state.index()] += dt;
        self.energy.since_ms = now;
        self.radio_state = to;
        if let Some(trace) = self.trace.as_mut() {
            trace.push((now, to));
        }
    }

    fn next_seq(&mut self) -> u16 {
        let s = self.seq;
        self.seq = self.seq.wrapping_add(1);
        s
    }

    /// Advances the node at `now`. Frames to transmit are appended to
    /// `outbox`; the return value is when the node next needs a tick.
    pub fn tick(&mut self, now: SimMillis, plant: &PlantState, outbox: &mut Vec<Outgoing>) -> Option<SimMillis> {
        match self.radio_state {
            RadioState::Sleep => {
                if self.exhausted {
                    return None;
                }
                if now < self.next_wake_ms {
                    return Some(self.next_wake_ms);
                }
                if self.used_at(now) >= self.energy_model.capacity_mah {
                    self.exhausted = true;
                    self.pending.clear();
                    return None;
                }
                self.transition(RadioState::Idle, now);
                self.wake(now, plant);
                Some(now + self.timing.wake_ms)
            }
            RadioState::Idle => {
                if self.tx_queue.is_empty() {
                    self.transition(RadioState::Receive, now);
                    return Some(now + self.timing.rx_window_ms);
                }
                self.transition(RadioState::Transmit, now);
                let frames = std::mem::take(&mut self.tx_queue);
                let per = self.timing.tx_ms_per_frame;
                for (i, frame) in frames.iter().enumerate() {
                    outbox.push(Outgoing { depart_ms: now + per * (i as u64 + 1), frame: *frame });
                }
                self.stats.frames_tx += frames.len() as u64;
                Some(now + per * frames.len() as u64)
            }
            RadioState::Transmit => {
                self.transition(RadioState::Receive, now);
                Some(now + self.timing.rx_window_ms)
            }
            RadioState::Receive => {
                self.transition(RadioState::Sleep, now);
                let max = self.timing.max_retransmits;
                let before = self.pending.len();
                let mut lost = 0;
                self.pending.retain(|p| {
                    let keep = p.tries < max;
                    if !keep && p.frame.ftype == FrameType::Data {
                        lost += 1;
                    }
                    keep
                });
                debug_assert!(self.pending.len() <= before);
                self.stats.data_lost += lost;
                if self.wake_commanded {
                    self.wake_commanded = false;
                    self.next_sample_ms = self.next_wake_ms.max(now);
                    self.next_wake_ms = self.next_sample_ms;
                } else if !self.pending.is_empty() || !self.deferred_acks.is_empty() {
                    self.next_wake_ms = (now + self.timing.ack_timeout_ms).min(self.next_sample_ms.max(now));
                } else {
                    self.next_wake_ms = self.next_sample_ms.max(now);
                }
                Some(self.next_wake_ms)
            }
        }
    }

    fn wake(&mut self, now: SimMillis, plant: &PlantState) {
        let mut queue: Vec<Frame> = std::mem::take(&mut self.deferred_acks);
        for p in self.pending.iter_mut() {
            p.tries += 1;
            self.stats.retransmits += 1;
            queue.push(p.frame);
        }
        if now >= self.next_sample_ms {
            let t = (now / 1000) as u32;
            let kinds = self.kinds.clone();
            for kind in kinds {
                let cal = self.calibration.range(kind);
                match adc_sample(observe(plant, kind), cal) {
                    Ok(counts) => {
                        let seq = self.next_seq();
                        let frame = Frame::data(self.addr, seq, kind, t, counts_to_centi(counts, cal));
                        self.pending.push(Pending { frame, tries: 0 });
                        self.stats.data_sent += 1;
                        queue.push(frame);
                    }
                    Err(SensorFault) => {
                        self.stats.sensor_faults += 1;
                        self.fault_flag = true;
                    }
                }
            }
            let every = u64::from(self.timing.heartbeat_every.max(1));
            if self.cycles.is_multiple_of(every) || self.fault_flag {
                let seq = self.next_seq();
                let (_, battery) = self.energy_report(now);
                let frame = Frame::heartbeat(self.addr, seq, t, battery, self.fault_flag);
                self.fault_flag = false;
                self.pending.push(Pending { frame, tries: 0 });
                self.stats.heartbeats += 1;
                queue.push(frame);
            }
            self.cycles += 1;
            self.last_sample_ms = Some(now);
            self.next_sample_ms = now + u64::from(self.sampling_interval_s) * 1000;
        }
        self.tx_queue = queue;
    }

    /// A downlink frame reaching the node. Returns false when the radio was
    /// off and the frame was missed.
    pub fn receive(&mut self, now: SimMillis, frame: &Frame) -> bool {
        if self.radio_state == RadioState::Sleep {
            self.stats.downlink_missed += 1;
            return false;
        }
        if frame.dst != self.addr && frame.dst != BROADCAST_ADDR {
            return true;
        }
        match frame.ftype {
            FrameType::Ack => {
                let before = self.pending.len();
                let mut acked_data = 0;
                self.pending.retain(|p| {
                    let hit = p.frame.seq == frame.seq;
                    if hit && p.frame.ftype == FrameType::Data {
                        acked_data += 1;
                    }
                    !hit
                });
                if self.pending.len() < before {
                    self.stats.data_acked += acked_data;
                }
            }
            FrameType::Cmd => {
                let ack = self.handle_command(frame, now);
                self.deferred_acks.push(ack);
            }
            FrameType::Data | FrameType::Heartbeat => {}
        }
        true
    }

    /// Applies a command and returns the ACK to send back. A repeated
    /// command sequence number is acknowledged again without reapplying.
    pub fn handle_command(&mut self, cmd: &Frame, now: SimMillis) -> Frame {
        if let Some((seq, ack)) = self.last_command {
            if seq == cmd.seq {
                return ack;
            }
        }
        self.stats.commands_handled += 1;
        let t = (now / 1000) as u32;
        let mut payload = 0;
        match cmd.kind_or_code {
            CMD_SET_INTERVAL => {
                let s = cmd.payload.clamp(MIN_INTERVAL_S as i32, MAX_INTERVAL_S as i32) as u32;
                self.sampling_interval_s = s;
                if let Some(last) = self.last_sample_ms {
                    self.next_sample_ms = last + u64::from(s) * 1000;
                }
            }
            CMD_SLEEP if cmd.payload >= 0 => {
                self.next_wake_ms = now + cmd.payload as u64 * 1000;
                self.wake_commanded = true;
            }
            CMD_WAKE => {
                self.next_wake_ms = now;
                self.wake_commanded = true;
            }
            _ => payload = ACK_ERROR,
        }
        let ack = Frame::ack(self.addr, cmd.src, cmd.seq, cmd.kind_or_code, t, payload);
        self.last_command = Some((cmd.seq, ack));
        ack
    }
}
