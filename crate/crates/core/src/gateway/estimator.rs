//! Hatch progress estimated from observed data.
//!
//! Readings build a zero-order-hold snapshot (latest value per kind). Once
//! the snapshot holds every suitability kind, its suitability is integrated
//! over time and divided by the nominal incubation time. The ETA projects
//! the remaining progress at the mean suitability of the trailing 30
//! minutes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::model::{suitability, HatchThresholds, Reading, SensorKind, Snapshot};

pub const HATCH_DONE: f64 = 0.999;
pub const ETA_WINDOW_S: f64 = 1800.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HatchEstimate {
    pub h_est: f64,
    pub eta_t: Option<f64>,
    pub last_update_t: f64,
    /// Suitability of the current snapshot.
    pub suitability: f64,
}

#[derive(Debug, Clone)]
pub struct HatchEstimator {
    snapshot: Snapshot,
    kind_t: [Option<u32>; 5],
    started: bool,
    last_t: f64,
    /// Integrated suitability-seconds up to `last_t`.
    progress_s: f64,
    current_s: f64,
    /// `(start_t, suitability)` segments covering the ETA window.
    segments: VecDeque<(f64, f64)>,
    first_crossing_t: Option<f64>,
}

impl Default for HatchEstimator {
    fn default() -> Self {
        HatchEstimator::new()
    }
}

impl HatchEstimator {
    pub fn new() -> HatchEstimator {
        HatchEstimator {
            snapshot: Snapshot::default(),
            kind_t: [None; 5],
            started: false,
            last_t: 0.0,
            progress_s: 0.0,
            current_s: 0.0,
            segments: VecDeque::new(),
            first_crossing_t: None,
        }
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    pub fn is_started(&self) -> bool {
        self.started
    }

    pub fn first_crossing_t(&self) -> Option<f64> {
        self.first_crossing_t
    }

    /// Integrates the held suitability up to `to` (never backwards).
    pub fn advance_to(&mut self, to: f64, thr: &HatchThresholds) {
        if !self.started || to <= self.last_t {
            return;
        }
        let target = HATCH_DONE * thr.t_hatch_s;
        let before = self.progress_s;
        self.progress_s += self.current_s * (to - self.last_t);
        if self.first_crossing_t.is_none() && before < target && self.progress_s >= target && self.current_s > 0.0 {
            self.first_crossing_t = Some(self.last_t + (target - before) / self.current_s);
        }
        self.last_t = to;
    }

    pub fn observe(&mut self, reading: &Reading, thr: &HatchThresholds) {
        let t = f64::from(reading.t);
        self.advance_to(t, thr);
        let slot = &mut self.kind_t[reading.kind.index()];
        if slot.is_some_and(|prev| prev > reading.t) {
            return;
        }
        *slot = Some(reading.t);
        self.snapshot.set(reading.kind, reading.value());
        if !self.snapshot.has_suitability_kinds() {
            return;
        }
        let s = suitability(&self.snapshot, thr).unwrap_or(0.0);
        if !self.started {
            self.started = true;
            self.last_t = t;
        }
        if s != self.current_s || self.segments.is_empty() {
            self.segments.push_back((self.last_t, s));
        }
        self.current_s = s;
        let horizon = self.last_t - ETA_WINDOW_S;
        while self.segments.len() > 1 && self.segments[1].0 <= horizon {
            self.segments.pop_front();
        }
    }

    /// Progress at `now`, holding the current suitability past the last
    /// reading.
    pub fn h_at(&self, now: f64, thr: &HatchThresholds) -> f64 {
        if !self.started {
            return 0.0;
        }
        let extra = self.current_s * (now - self.last_t).max(0.0);
        ((self.progress_s + extra) / thr.t_hatch_s).min(1.0)
    }

    /// Time-weighted mean suitability over `[now - 30 min, now]`.
    pub fn recent_suitability(&self, now: f64) -> f64 {
        let lo = now - ETA_WINDOW_S;
        let mut weighted = 0.0;
        let mut span = 0.0;
        for (i, &(start, s)) in self.segments.iter().enumerate() {
            let end = self.segments.get(i + 1).map_or(now, |n| n.0);
            let a = start.max(lo);
            let b = end.min(now);
            if b > a {
                weighted += s * (b - a);
                span += b - a;
            }
        }
        if span > 0.0 {
            weighted / span
        } else {
            self.current_s
        }
    }

    pub fn estimate(&self, now: f64, thr: &HatchThresholds) -> Option<HatchEstimate> {
        if !self.started {
            return None;
        }
        let h_est = self.h_at(now, thr);
        let s_recent = self.recent_suitability(now);
        let eta_t = (s_recent > 0.0).then(|| now + ((HATCH_DONE - h_est) * thr.t_hatch_s / s_recent).max(0.0));
        Some(HatchEstimate { h_est, eta_t, last_update_t: self.last_t, suitability: self.current_s })
    }
}

/// Batch form: progress after feeding `history` (in arrival order) and
/// holding the final snapshot until `now`.
pub fn estimate_hatch(history: &[Reading], thr: &HatchThresholds, now: f64) -> Option<HatchEstimate> {
    let mut est = HatchEstimator::new();
    for r in history {
        est.observe(r, thr);
    }
    est.estimate(now, thr)
}

/// Kinds the estimator needs before it can produce a value.
pub fn required_kinds() -> &'static [SensorKind] {
    &SensorKind::SUITABILITY
}
