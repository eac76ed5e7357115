//! Threshold alerting with persistence (debounce) and silent-node alerts.
//!
//! Soft alerts need `RAISE_AFTER` consecutive out-of-soft samples in one
//! direction; hard alerts fire on the first hard excursion. Both clear after
//! `CLEAR_AFTER` consecutive in-range samples. Acknowledging an alert does
//! not clear it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{classify, Classification, HatchThresholds, Reading, SensorKind};

pub const RAISE_AFTER: u32 = 3;
pub const CLEAR_AFTER: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertSource {
    Sensor(SensorKind),
    Silence,
}

impl AlertSource {
    pub fn label(&self) -> String {
        match self {
            AlertSource::Sensor(k) => k.name().to_string(),
            AlertSource::Silence => "silence".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Soft,
    Hard,
    NodeSilent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertDirection {
    Low,
    High,
    #[serde(rename = "n/a")]
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub id: u64,
    pub source: AlertSource,
    /// Node that triggered the alert; always set for silence alerts.
    pub node: Option<u16>,
    pub severity: Severity,
    pub direction: AlertDirection,
    pub raised_t: u32,
    pub cleared_t: Option<u32>,
    pub acked_by: Option<String>,
    pub acked_t: Option<u32>,
    pub value: f64,
}

impl AlertEvent {
    pub fn is_open(&self) -> bool {
        self.cleared_t.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Raised,
    Cleared,
    Acked,
}

/// One line of alerts.ndjson.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertTransition {
    pub transition: TransitionKind,
    pub t: u32,
    pub alert: AlertEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AckError {
    #[error("alert {0} not found")]
    NotFound(u64),
    #[error("alert {0} already acknowledged")]
    AlreadyAcked(u64),
}

type OpenKey = (AlertSource, Option<u16>, AlertDirection, Severity);

#[derive(Debug, Clone, Copy, Default)]
struct Streak {
    low: u32,
    high: u32,
    in_range: u32,
}

#[derive(Debug, Clone, Default)]
pub struct AlertEngine {
    alerts: BTreeMap<u64, AlertEvent>,
    open: BTreeMap<OpenKey, u64>,
    streaks: BTreeMap<SensorKind, Streak>,
    next_id: u64,
}

impl AlertEngine {
    pub fn new() -> AlertEngine {
        AlertEngine { next_id: 1, ..Default::default() }
    }

    pub fn get(&self, id: u64) -> Option<&AlertEvent> {
        self.alerts.get(&id)
    }

    pub fn all(&self) -> impl Iterator<Item = &AlertEvent> {
        self.alerts.values()
    }

    pub fn open(&self) -> impl Iterator<Item = &AlertEvent> {
        self.open.values().filter_map(|id| self.alerts.get(id))
    }

    fn raise(&mut self, key: OpenKey, node: Option<u16>, t: u32, value: f64) -> AlertTransition {
        let id = self.next_id;
        self.next_id += 1;
        let alert = AlertEvent {
            id,
            source: key.0,
            node,
            severity: key.3,
            direction: key.2,
            raised_t: t,
            cleared_t: None,
            acked_by: None,
            acked_t: None,
            value,
        };
        self.alerts.insert(id, alert.clone());
        self.open.insert(key, id);
        AlertTransition { transition: TransitionKind::Raised, t, alert }
    }

    fn clear(&mut self, key: &OpenKey, t: u32) -> Option<AlertTransition> {
        let id = self.open.remove(key)?;
        let alert = self.alerts.get_mut(&id)?;
        alert.cleared_t = Some(t.max(alert.raised_t));
        Some(AlertTransition { transition: TransitionKind::Cleared, t, alert: alert.clone() })
    }

    /// Feeds one accepted reading through the hysteresis state machine.
    pub fn evaluate(&mut self, reading: &Reading, thr: &HatchThresholds) -> Vec<AlertTransition> {
        let Some(band) = thr.band(reading.kind) else {
            return Vec::new();
        };
        let value = reading.value();
        let Ok(class) = classify(value, band) else {
            return Vec::new();
        };
        let streak = self.streaks.entry(reading.kind).or_default();
        match class {
            Classification::LowSoft | Classification::LowHard => {
                streak.low += 1;
                streak.high = 0;
                streak.in_range = 0;
            }
            Classification::HighSoft | Classification::HighHard => {
                streak.high += 1;
                streak.low = 0;
                streak.in_range = 0;
            }
            Classification::InRange => {
                streak.in_range += 1;
                streak.low = 0;
                streak.high = 0;
            }
        }
        let streak = *streak;
        let src = AlertSource::Sensor(reading.kind);
        let t = reading.t;
        let mut out = Vec::new();

        let mut maybe_raise = |engine: &mut Self, dir, sev| {
            let key = (src, None, dir, sev);
            if !engine.open.contains_key(&key) {
                out.push(engine.raise(key, Some(reading.node), t, value));
            }
        };
        match class {
            Classification::LowHard => maybe_raise(self, AlertDirection::Low, Severity::Hard),
            Classification::HighHard => maybe_raise(self, AlertDirection::High, Severity::Hard),
            _ => {}
        }
        if streak.low >= RAISE_AFTER {
            maybe_raise(self, AlertDirection::Low, Severity::Soft);
        }
        if streak.high >= RAISE_AFTER {
            maybe_raise(self, AlertDirection::High, Severity::Soft);
        }
        if streak.in_range >= CLEAR_AFTER {
            let keys: Vec<OpenKey> = self.open.keys().filter(|k| k.0 == src).copied().collect();
            for key in keys {
                out.extend(self.clear(&key, t));
            }
        }
        out
    }

    pub fn raise_silence(&mut self, node: u16, t: u32) -> Option<AlertTransition> {
        let key = (AlertSource::Silence, Some(node), AlertDirection::NotApplicable, Severity::NodeSilent);
        if self.open.contains_key(&key) {
            return None;
        }
        Some(self.raise(key, Some(node), t, 0.0))
    }

    pub fn clear_silence(&mut self, node: u16, t: u32) -> Option<AlertTransition> {
        let key = (AlertSource::Silence, Some(node), AlertDirection::NotApplicable, Severity::NodeSilent);
        self.clear(&key, t)
    }

    pub fn silence_open(&self, node: u16) -> bool {
        self.open.contains_key(&(AlertSource::Silence, Some(node), AlertDirection::NotApplicable, Severity::NodeSilent))
    }

    pub fn ack(&mut self, id: u64, who: &str, t: u32) -> Result<AlertTransition, AckError> {
        let alert = self.alerts.get_mut(&id).ok_or(AckError::NotFound(id))?;
        if alert.acked_by.is_some() {
            return Err(AckError::AlreadyAcked(id));
        }
        alert.acked_by = Some(who.to_string());
        alert.acked_t = Some(t);
        Ok(AlertTransition { transition: TransitionKind::Acked, t, alert: alert.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_thresholds;

    fn reading(kind: SensorKind, t: u32, value: f64) -> Reading {
        Reading { node: 1, kind, seq: t as u16, t, centi: (value * 100.0).round() as i32 }
    }

    fn feed(engine: &mut AlertEngine, kind: SensorKind, values: &[f64]) -> Vec<Vec<AlertTransition>> {
        let thr = default_thresholds();
        values.iter().enumerate().map(|(i, v)| engine.evaluate(&reading(kind, i as u32 * 60, *v), &thr)).collect()
    }

    #[test]
    fn soft_alert_needs_three_in_a_row() {
        let mut e = AlertEngine::new();
        let out = feed(&mut e, SensorKind::Ph, &[8.4, 9.0, 9.0, 9.0]);
        assert!(out[..3].iter().all(|v| v.is_empty()));
        assert_eq!(out[3].len(), 1);
        let a = &out[3][0].alert;
        assert_eq!((a.severity, a.direction, a.raised_t), (Severity::Soft, AlertDirection::High, 180));
    }

    #[test]
    fn broken_streak_raises_nothing() {
        let mut e = AlertEngine::new();
        let out = feed(&mut e, SensorKind::Ph, &[9.0, 9.0, 8.0, 9.0, 9.0]);
        assert!(out.iter().all(|v| v.is_empty()));
    }

    #[test]
    fn hard_alert_is_immediate() {
        let mut e = AlertEngine::new();
        let out = feed(&mut e, SensorKind::TemperatureC, &[36.0]);
        assert_eq!(out[0].len(), 1);
        assert_eq!(out[0][0].alert.severity, Severity::Hard);
        assert_eq!(out[0][0].alert.direction, AlertDirection::High);
    }

    #[test]
    fn clears_after_three_in_range_and_never_duplicates() {
        let mut e = AlertEngine::new();
        let out = feed(&mut e, SensorKind::TemperatureC, &[36.0, 36.0, 36.0, 36.0, 25.0, 25.0, 25.0, 25.0]);
        let raised: usize = out.iter().flatten().filter(|t| t.transition == TransitionKind::Raised).count();
        // hard on the first sample, soft on the third
        assert_eq!(raised, 2);
        assert_eq!(out[6].iter().filter(|t| t.transition == TransitionKind::Cleared).count(), 2);
        assert!(out[7].is_empty());
        assert_eq!(e.open().count(), 0);
    }

    #[test]
    fn ack_semantics() {
        let mut e = AlertEngine::new();
        feed(&mut e, SensorKind::TemperatureC, &[36.0]);
        let id = e.open().next().unwrap().id;
        let tr = e.ack(id, "ana", 100).unwrap();
        assert_eq!(tr.alert.acked_by.as_deref(), Some("ana"));
        assert!(e.get(id).unwrap().is_open());
        assert_eq!(e.ack(id, "bo", 101), Err(AckError::AlreadyAcked(id)));
        assert_eq!(e.ack(999_999, "bo", 101), Err(AckError::NotFound(999_999)));
    }

    #[test]
    fn silence_alerts_are_per_node() {
        let mut e = AlertEngine::new();
        assert!(e.raise_silence(1, 10).is_some());
        assert!(e.raise_silence(1, 20).is_none());
        assert!(e.raise_silence(2, 20).is_some());
        let cleared = e.clear_silence(1, 30).unwrap();
        assert_eq!(cleared.alert.cleared_t, Some(30));
        assert!(e.clear_silence(1, 40).is_none());
    }
}
