//! What the gateway knows about each node, plus the per-node duplicate
//! filter.

use std::collections::{BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::SensorKind;

pub const DEDUP_WINDOW: usize = 1024;
/// A node is overdue after this many sampling intervals without a frame.
pub const SILENCE_INTERVALS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Liveness {
    Active,
    Sleeping,
    Silent,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCounters {
    pub frames_ok: u64,
    pub duplicate: u64,
    pub crc_bad: u64,
    pub decode_bad: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDirectoryEntry {
    pub addr: u16,
    pub registered_t: f64,
    pub last_seen_t: Option<f64>,
    pub state: Liveness,
    pub battery_centi_pct: Option<i32>,
    pub sampling_interval_s: u32,
    /// Kinds the node has reported so far.
    pub kinds: BTreeSet<SensorKind>,
    pub heartbeat_acked: bool,
    pub sensor_fault: bool,
    /// End of a commanded sleep; silence is not counted before it.
    pub sleep_until_t: Option<f64>,
    pub counters: LinkCounters,
}

impl NodeDirectoryEntry {
    pub fn new(addr: u16, sampling_interval_s: u32, now: f64) -> NodeDirectoryEntry {
        NodeDirectoryEntry {
            addr,
            registered_t: now,
            last_seen_t: None,
            state: Liveness::Active,
            battery_centi_pct: None,
            sampling_interval_s,
            kinds: BTreeSet::new(),
            heartbeat_acked: false,
            sensor_fault: false,
            sleep_until_t: None,
            counters: LinkCounters::default(),
        }
    }

    /// Silence is measured from this instant.
    pub fn silence_reference(&self) -> f64 {
        let seen = self.last_seen_t.unwrap_or(self.registered_t);
        self.sleep_until_t.map_or(seen, |s| seen.max(s))
    }

    pub fn is_overdue(&self, now: f64) -> bool {
        now - self.silence_reference() > SILENCE_INTERVALS * f64::from(self.sampling_interval_s)
    }
}

/// Remembers the last `DEDUP_WINDOW` sequence numbers seen from one node.
#[derive(Debug, Clone, Default)]
pub struct DedupWindow {
    order: VecDeque<u16>,
    seen: HashSet<u16>,
}

impl DedupWindow {
    /// True when `seq` is new; it is then remembered.
    pub fn insert(&mut self, seq: u16) -> bool {
        if !self.seen.insert(seq) {
            return false;
        }
        self.order.push_back(seq);
        if self.order.len() > DEDUP_WINDOW {
            let old = self.order.pop_front().expect("non-empty");
            self.seen.remove(&old);
        }
        true
    }

    pub fn contains(&self, seq: u16) -> bool {
        self.seen.contains(&seq)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}
