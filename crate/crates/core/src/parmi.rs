//! Run lifecycle: culture preparation, aeration, node setup, sensor
//! attachment, monitoring and analysis, each guarded by a gate.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{HatchThresholds, PrepReport, SensorKind};
use crate::report::NodeSummary;

/// Readings older than this do not count as a live sensor.
pub const ATTACH_FRESHNESS_S: f64 = 300.0;
pub const DEFAULT_MAX_DURATION_S: f64 = 36.0 * 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPhase {
    CulturePrep,
    AerationOn,
    NodeSetup,
    SensorAttach,
    Monitoring,
    Analysis,
}

impl RunPhase {
    pub const ALL: [RunPhase; 6] = [
        RunPhase::CulturePrep,
        RunPhase::AerationOn,
        RunPhase::NodeSetup,
        RunPhase::SensorAttach,
        RunPhase::Monitoring,
        RunPhase::Analysis,
    ];

    pub fn next(self) -> Option<RunPhase> {
        let i = RunPhase::ALL.iter().position(|p| *p == self)?;
        RunPhase::ALL.get(i + 1).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RunPhase::CulturePrep => "culture_prep",
            RunPhase::AerationOn => "aeration_on",
            RunPhase::NodeSetup => "node_setup",
            RunPhase::SensorAttach => "sensor_attach",
            RunPhase::Monitoring => "monitoring",
            RunPhase::Analysis => "analysis",
        }
    }
}

impl fmt::Display for RunPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEvidence {
    pub addr: u16,
    pub kinds: Vec<SensorKind>,
    pub heartbeat_acked: bool,
}

/// Everything the gates look at. Assembled by the caller from gateway
/// state and operator confirmations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GateEvidence {
    pub culture_prepared: bool,
    pub culture: Option<PrepReport>,
    pub aerator_on: bool,
    pub nodes: Vec<NodeEvidence>,
    /// Time of the latest accepted reading per kind.
    pub latest_reading_t: BTreeMap<SensorKind, f64>,
    pub h_est: f64,
    pub max_duration_s: f64,
    pub operator_stop: bool,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum AdvanceError {
    #[error("cannot go from {current} to {requested}: phases advance one at a time")]
    OrderViolation { current: RunPhase, requested: RunPhase },
    #[error("gate out of {phase} blocked: {}", reasons.join("; "))]
    GateBlocked { phase: RunPhase, reasons: Vec<String> },
    #[error("run already in analysis")]
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub phase: RunPhase,
    pub entered_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedingAdvisory {
    pub t: f64,
    pub elapsed_s: f64,
    pub message: String,
}

/// One line of phases.ndjson.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum PhaseRecord {
    Transition {
        from: Option<RunPhase>,
        to: RunPhase,
        t: f64,
        evidence: serde_json::Value,
    },
    Blocked {
        phase: RunPhase,
        t: f64,
        reasons: Vec<String>,
    },
    Advisory {
        t: f64,
        elapsed_s: f64,
        message: String,
    },
    /// Final node accounting, written once when the run stops.
    RunEnd {
        t: f64,
        outcome: RunOutcome,
        nodes: Vec<NodeSummary>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    GateBlocked,
}

/// Reasons the gate out of `from` is closed; empty when it is open.
pub fn gate_reasons(from: RunPhase, ev: &GateEvidence, now: f64) -> Vec<String> {
    let mut reasons = Vec::new();
    match from {
        RunPhase::CulturePrep => {
            if !ev.culture_prepared {
                reasons.push("culture preparation not confirmed".to_string());
            }
            match &ev.culture {
                None => reasons.push("culture not validated".to_string()),
                Some(report) => {
                    reasons.extend(report.violations.iter().map(|v| v.message.clone()));
                    if !report.pass && report.violations.is_empty() {
                        reasons.push("culture validation did not pass".to_string());
                    }
                }
            }
        }
        RunPhase::AerationOn => {
            if !ev.aerator_on {
                reasons.push("aerator is not on".to_string());
            }
        }
        RunPhase::NodeSetup => {
            let ready =
                ev.nodes.iter().any(|n| n.heartbeat_acked && SensorKind::ALL.iter().all(|k| n.kinds.contains(k)));
            if ev.nodes.is_empty() {
                reasons.push("no sensor node registered".to_string());
            } else if !ready {
                reasons.push("no node with all five sensors attached and an acknowledged heartbeat".to_string());
            }
        }
        RunPhase::SensorAttach => {
            for kind in SensorKind::ALL {
                let fresh = ev.latest_reading_t.get(&kind).is_some_and(|t| now - t <= ATTACH_FRESHNESS_S);
                if !fresh {
                    reasons.push(format!("no {kind} reading in the last 5 min"));
                }
            }
        }
        RunPhase::Monitoring => {
            let done = ev.h_est >= crate::gateway::HATCH_DONE || now >= ev.max_duration_s || ev.operator_stop;
            if !done {
                reasons.push(format!(
                    "hatch estimate {:.4} below 0.999, no operator stop, {} s before max duration",
                    ev.h_est,
                    (ev.max_duration_s - now).max(0.0)
                ));
            }
        }
        RunPhase::Analysis => {}
    }
    reasons
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orchestrator {
    history: Vec<PhaseEntry>,
    advisory: Option<FeedingAdvisory>,
}

impl Orchestrator {
    pub fn new(start_t: f64) -> Orchestrator {
        Orchestrator { history: vec![PhaseEntry { phase: RunPhase::CulturePrep, entered_t: start_t }], advisory: None }
    }

    pub fn current(&self) -> RunPhase {
        self.history.last().expect("history never empty").phase
    }

    pub fn history(&self) -> &[PhaseEntry] {
        &self.history
    }

    pub fn entered_t(&self, phase: RunPhase) -> Option<f64> {
        self.history.iter().find(|e| e.phase == phase).map(|e| e.entered_t)
    }

    pub fn advisory(&self) -> Option<&FeedingAdvisory> {
        self.advisory.as_ref()
    }

    pub fn advance(&mut self, ev: &GateEvidence, now: f64) -> Result<RunPhase, AdvanceError> {
        let next = self.current().next().ok_or(AdvanceError::Finished)?;
        self.advance_to(next, ev, now)
    }

    pub fn advance_to(&mut self, target: RunPhase, ev: &GateEvidence, now: f64) -> Result<RunPhase, AdvanceError> {
        let current = self.current();
        let Some(next) = current.next() else {
            return Err(AdvanceError::Finished);
        };
        if target != next {
            return Err(AdvanceError::OrderViolation { current, requested: target });
        }
        let mut reasons = gate_reasons(current, ev, now);
        let last_t = self.history.last().expect("non-empty").entered_t;
        if now <= last_t {
            reasons.push(format!("{current} was entered at {last_t} s; phases need strictly increasing times"));
        }
        if !reasons.is_empty() {
            return Err(AdvanceError::GateBlocked { phase: current, reasons });
        }
        self.history.push(PhaseEntry { phase: next, entered_t: now });
        Ok(next)
    }

    /// One-shot reminder to start feeding once the culture has hatched for
    /// the lower bound of the feeding window.
    pub fn feeding_advisory(&mut self, now: f64, hatch_start_t: f64, thr: &HatchThresholds) -> Option<FeedingAdvisory> {
        if self.advisory.is_some() || self.current() != RunPhase::Monitoring {
            return None;
        }
        let elapsed = now - hatch_start_t;
        if !thr.feeding_window_s.contains(elapsed) {
            return None;
        }
        let advisory = FeedingAdvisory {
            t: now,
            elapsed_s: elapsed,
            message: format!(
                "feeding due: {:.1} h since hatch start, add yeast to the culture periodically",
                elapsed / 3600.0
            ),
        };
        self.advisory = Some(advisory.clone());
        Some(advisory)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_thresholds, validate_culture, CultureSpec};

    fn full_evidence(now: f64) -> GateEvidence {
        let thr = default_thresholds();
        GateEvidence {
            culture_prepared: true,
            culture: Some(validate_culture(&CultureSpec::bench_default(), &thr).unwrap()),
            aerator_on: true,
            nodes: vec![NodeEvidence { addr: 1, kinds: SensorKind::ALL.to_vec(), heartbeat_acked: true }],
            latest_reading_t: SensorKind::ALL.iter().map(|k| (*k, now - 10.0)).collect(),
            h_est: 0.0,
            max_duration_s: DEFAULT_MAX_DURATION_S,
            operator_stop: false,
        }
    }

    #[test]
    fn happy_path_reaches_monitoring() {
        let mut o = Orchestrator::new(0.0);
        for t in 1..=4 {
            o.advance(&full_evidence(t as f64), t as f64).unwrap();
        }
        assert_eq!(o.current(), RunPhase::Monitoring);
        assert_eq!(o.history().len(), 5);
        let times: Vec<f64> = o.history().iter().map(|e| e.entered_t).collect();
        assert!(times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn salty_culture_blocks() {
        let thr = default_thresholds();
        let mut ev = full_evidence(1.0);
        let salty = CultureSpec { salinity_ppt: 9.0, ..CultureSpec::bench_default() };
        ev.culture = Some(validate_culture(&salty, &thr).unwrap());
        let err = Orchestrator::new(0.0).advance(&ev, 1.0).unwrap_err();
        assert_eq!(
            err,
            AdvanceError::GateBlocked {
                phase: RunPhase::CulturePrep,
                reasons: vec!["salinity 9 outside 5–8 ppt".into()]
            }
        );
    }

    #[test]
    fn skipping_is_an_order_violation() {
        let mut o = Orchestrator::new(0.0);
        let err = o.advance_to(RunPhase::Monitoring, &full_evidence(1.0), 1.0).unwrap_err();
        assert!(matches!(err, AdvanceError::OrderViolation { .. }));
    }

    #[test]
    fn stale_readings_block_attach() {
        let mut o = Orchestrator::new(0.0);
        for t in 1..=3 {
            o.advance(&full_evidence(t as f64), t as f64).unwrap();
        }
        let mut ev = full_evidence(1000.0);
        ev.latest_reading_t.insert(SensorKind::Ph, 600.0);
        let err = o.advance(&ev, 1000.0).unwrap_err();
        let AdvanceError::GateBlocked { reasons, .. } = err else { panic!() };
        assert_eq!(reasons, vec!["no ph reading in the last 5 min".to_string()]);
    }

    #[test]
    fn monitoring_exit_conditions() {
        let mut o = Orchestrator::new(0.0);
        for t in 1..=4 {
            o.advance(&full_evidence(t as f64), t as f64).unwrap();
        }
        let mut ev = full_evidence(100.0);
        ev.h_est = 0.5;
        assert!(o.clone().advance(&ev, 100.0).is_err());
        ev.h_est = 0.999;
        assert_eq!(o.clone().advance(&ev, 100.0), Ok(RunPhase::Analysis));
        ev.h_est = 0.5;
        ev.operator_stop = true;
        assert_eq!(o.clone().advance(&ev, 100.0), Ok(RunPhase::Analysis));
        ev.operator_stop = false;
        assert_eq!(o.clone().advance(&ev, DEFAULT_MAX_DURATION_S), Ok(RunPhase::Analysis));
        o.advance(&ev, DEFAULT_MAX_DURATION_S).unwrap();
        assert_eq!(o.advance(&ev, DEFAULT_MAX_DURATION_S + 1.0), Err(AdvanceError::Finished));
    }

    #[test]
    fn feeding_advisory_once_in_window() {
        let thr = default_thresholds();
        let mut o = Orchestrator::new(0.0);
        for t in 1..=4 {
            o.advance(&full_evidence(t as f64), t as f64).unwrap();
        }
        assert!(o.feeding_advisory(12.0 * 3600.0, 0.0, &thr).is_none());
        let adv = o.feeding_advisory(18.0 * 3600.0, 0.0, &thr).unwrap();
        assert_eq!(adv.t, 64_800.0);
        assert!(o.feeding_advisory(18.0 * 3600.0 + 1.0, 0.0, &thr).is_none());
        assert!(o.feeding_advisory(21.0 * 3600.0, 0.0, &thr).is_none());
    }

    #[test]
    fn no_advisory_outside_monitoring() {
        let thr = default_thresholds();
        let mut o = Orchestrator::new(0.0);
        assert!(o.feeding_advisory(18.0 * 3600.0, 0.0, &thr).is_none());
    }
}
