//! End-of-run report, computed from the run directory alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::gateway::alerts::{AlertTransition, TransitionKind};
use crate::gateway::persist::{self, Manifest, PersistError, ALERTS, PHASES, READINGS, REPORT};
use crate::gateway::{HatchEstimator, LinkCounters, HATCH_DONE};
use crate::model::{classify, Classification, HatchThresholds, Reading, SensorKind};
use crate::node::NodeStats;
use crate::parmi::{PhaseEntry, PhaseRecord, RunOutcome, RunPhase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub addr: u16,
    pub energy_used_mah: f64,
    pub battery_centi_pct: i32,
    /// Transmit, receive, idle, sleep.
    pub time_in_states_ms: [u64; 4],
    pub stats: NodeStats,
    pub link: LinkCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeInRange {
    pub fraction: f64,
    pub observed_s: f64,
    pub readings: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlertSummary {
    /// Raised alerts by source, then severity.
    pub raised: BTreeMap<String, BTreeMap<String, u64>>,
    pub total_raised: u64,
    pub total_cleared: u64,
    pub total_acked: u64,
    pub open_at_end: u64,
    pub mean_time_to_ack_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatchSummary {
    pub final_h_est: f64,
    pub first_crossing_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub outcome: Option<RunOutcome>,
    pub end_t: f64,
    pub phases: Vec<PhaseEntry>,
    pub readings: u64,
    pub time_in_range: BTreeMap<SensorKind, TimeInRange>,
    pub alerts: AlertSummary,
    pub hatch: HatchSummary,
    pub nodes: Vec<NodeSummary>,
    pub feeding_advisory_t: Option<f64>,
    pub thresholds: HatchThresholds,
    pub config: RunConfig,
}

/// Time-weighted share of `[first reading, end_t]` each kind spent inside
/// its soft band, holding each reading until the next one of its kind.
pub fn time_in_range(readings: &[Reading], thr: &HatchThresholds, end_t: f64) -> BTreeMap<SensorKind, TimeInRange> {
    let mut out = BTreeMap::new();
    for kind in SensorKind::ALL {
        let Some(band) = thr.band(kind) else { continue };
        let mut series: Vec<&Reading> = readings.iter().filter(|r| r.kind == kind).collect();
        if series.is_empty() {
            continue;
        }
        series.sort_by_key(|r| r.t);
        let mut inside = 0.0;
        let mut total = 0.0;
        for (i, r) in series.iter().enumerate() {
            let start = f64::from(r.t);
            let end = series.get(i + 1).map_or(end_t, |n| f64::from(n.t)).max(start);
            let span = end - start;
            total += span;
            if classify(r.value(), band) == Ok(Classification::InRange) {
                inside += span;
            }
        }
        let fraction = if total > 0.0 {
            inside / total
        } else {
            let ok = series.iter().filter(|r| classify(r.value(), band) == Ok(Classification::InRange)).count();
            ok as f64 / series.len() as f64
        };
        out.insert(kind, TimeInRange { fraction, observed_s: total, readings: series.len() as u64 });
    }
    out
}

pub fn summarize_alerts(transitions: &[AlertTransition]) -> AlertSummary {
    let mut s = AlertSummary::default();
    let mut open = BTreeMap::new();
    let mut ack_total = 0.0;
    for tr in transitions {
        match tr.transition {
            TransitionKind::Raised => {
                let sev = serde_json::to_value(tr.alert.severity).expect("enum serializes");
                let sev = sev.as_str().unwrap_or_default().to_string();
                *s.raised.entry(tr.alert.source.label()).or_default().entry(sev).or_default() += 1;
                s.total_raised += 1;
                open.insert(tr.alert.id, ());
            }
            TransitionKind::Cleared => {
                s.total_cleared += 1;
                open.remove(&tr.alert.id);
            }
            TransitionKind::Acked => {
                s.total_acked += 1;
                if let Some(acked_t) = tr.alert.acked_t {
                    ack_total += f64::from(acked_t) - f64::from(tr.alert.raised_t);
                }
            }
        }
    }
    s.open_at_end = open.len() as u64;
    s.mean_time_to_ack_s = (s.total_acked > 0).then(|| ack_total / s.total_acked as f64);
    s
}

/// Builds the report from the files in `dir`. Nothing is written.
pub fn compute_report(dir: &Path) -> Result<Report, PersistError> {
    let manifest = Manifest::load(dir)?;
    let thr = manifest.thresholds.clone();
    let readings: Vec<Reading> = persist::read_lines(&dir.join(READINGS))?;
    let alerts: Vec<AlertTransition> = persist::read_lines(&dir.join(ALERTS))?;
    let records: Vec<PhaseRecord> = persist::read_lines(&dir.join(PHASES))?;

    let mut phases = Vec::new();
    let mut feeding_advisory_t = None;
    let mut run_end = None;
    let mut last_t: f64 = 0.0;
    for rec in &records {
        match rec {
            PhaseRecord::Transition { to, t, .. } => {
                phases.push(PhaseEntry { phase: *to, entered_t: *t });
                last_t = last_t.max(*t);
            }
            PhaseRecord::Blocked { t, .. } => last_t = last_t.max(*t),
            PhaseRecord::Advisory { t, .. } => {
                feeding_advisory_t.get_or_insert(*t);
            }
            PhaseRecord::RunEnd { t, outcome, nodes } => {
                last_t = last_t.max(*t);
                run_end = Some((*outcome, nodes.clone()));
            }
        }
    }
    let end_t = phases
        .iter()
        .find(|p| p.phase == RunPhase::Analysis)
        .map(|p| p.entered_t)
        .or(run_end.as_ref().map(|_| last_t))
        .unwrap_or_else(|| readings.iter().map(|r| f64::from(r.t)).fold(last_t, f64::max));

    let mut est = HatchEstimator::new();
    for r in &readings {
        est.observe(r, &thr);
    }
    est.advance_to(end_t, &thr);
    let hatch = HatchSummary { final_h_est: est.h_at(end_t, &thr), first_crossing_t: est.first_crossing_t() };
    debug_assert!(hatch.first_crossing_t.is_none() || hatch.final_h_est >= HATCH_DONE - 1e-9);

    let (outcome, nodes) = match run_end {
        Some((o, n)) => (Some(o), n),
        None => (None, Vec::new()),
    };
    Ok(Report {
        seed: manifest.seed,
        outcome,
        end_t,
        phases,
        readings: readings.len() as u64,
        time_in_range: time_in_range(&readings, &thr, end_t),
        alerts: summarize_alerts(&alerts),
        hatch,
        nodes,
        feeding_advisory_t,
        thresholds: thr,
        config: manifest.config,
    })
}

pub fn report_json(report: &Report) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

/// Computes the report and writes report.json.
pub fn finalize_report(dir: &Path) -> Result<Report, PersistError> {
    let report = compute_report(dir)?;
    let path = dir.join(REPORT);
    std::fs::write(&path, report_json(&report)).map_err(|e| PersistError::io(&path, e))?;
    Ok(report)
}

fn fmt_opt(v: Option<f64>, unit: &str) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.1} {unit}"))
}

fn band_section(out: &mut String, title: &str, kind: SensorKind, r: &Report) {
    let _ = writeln!(out, "## {title}\n");
    if let Some(b) = r.thresholds.band(kind) {
        let u = kind.unit();
        let _ = writeln!(
            out,
            "- soft band: {}–{} {u}, hard band: {}–{} {u}",
            b.soft_lo(),
            b.soft_hi(),
            b.hard_lo(),
            b.hard_hi()
        );
    }
    match r.time_in_range.get(&kind) {
        Some(tir) => {
            let _ = writeln!(out, "- time in range: {:.2}% over {} readings", tir.fraction * 100.0, tir.readings);
        }
        None => {
            let _ = writeln!(out, "- no readings");
        }
    }
    let raised = r.alerts.raised.get(kind.name()).map_or(0, |m| m.values().sum::<u64>());
    let _ = writeln!(out, "- alerts raised: {raised}\n");
}

/// Human-readable summary with one section per hatching parameter.
pub fn render_markdown(r: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Hatch run report\n");
    let outcome =
        r.outcome.map_or("unknown".to_string(), |o| serde_json::to_value(o).unwrap().as_str().unwrap().to_string());
    let _ = writeln!(
        out,
        "- seed: {}\n- outcome: {outcome}\n- end: {:.0} s ({:.2} h)\n- readings: {}\n",
        r.seed,
        r.end_t,
        r.end_t / 3600.0,
        r.readings
    );

    let _ = writeln!(out, "## Water\n");
    let quality = r.config.culture.water_quality.as_deref().unwrap_or("not recorded");
    let _ = writeln!(
        out,
        "- media: {} parts sea water to {} parts tap water, {} L\n- quality: {quality}\n",
        r.config.culture.seawater_parts, r.config.culture.tapwater_parts, r.config.culture.volume_l
    );
    band_section(&mut out, "Oxygen", SensorKind::DissolvedO2MgPerL, r);
    band_section(&mut out, "pH", SensorKind::Ph, r);
    band_section(&mut out, "Illumination", SensorKind::LightLux, r);
    band_section(&mut out, "Temperature", SensorKind::TemperatureC, r);
    band_section(&mut out, "Humidity", SensorKind::HumidityPct, r);

    let _ = writeln!(out, "## Aeration\n");
    let aeration = r.phases.iter().find(|p| p.phase == RunPhase::AerationOn);
    let _ = writeln!(out, "- aerator confirmed on: {}\n", fmt_opt(aeration.map(|p| p.entered_t), "s"));

    let _ = writeln!(out, "## Salinity\n");
    let s = r.thresholds.salinity_ppt;
    let _ = writeln!(out, "- prepared: {} ppt (limit {}–{} ppt)\n", r.config.culture.salinity_ppt, s.lo, s.hi);

    let _ = writeln!(out, "## Density of cysts\n");
    let _ = writeln!(
        out,
        "- {} g/L (limit {} g/L)\n",
        r.config.culture.density_g_per_l(),
        r.thresholds.max_density_g_per_l
    );

    let _ = writeln!(out, "## Incubation time\n");
    let _ = writeln!(
        out,
        "- final hatch estimate: {:.4}\n- reached 0.999 at: {}\n- feeding advisory: {}\n",
        r.hatch.final_h_est,
        fmt_opt(r.hatch.first_crossing_t, "s"),
        fmt_opt(r.feeding_advisory_t, "s")
    );

    let _ = writeln!(out, "## Alerts\n");
    let _ = writeln!(
        out,
        "- raised {}, cleared {}, acknowledged {}, open at end {}\n- mean time to acknowledge: {}\n",
        r.alerts.total_raised,
        r.alerts.total_cleared,
        r.alerts.total_acked,
        r.alerts.open_at_end,
        fmt_opt(r.alerts.mean_time_to_ack_s, "s")
    );

    let _ = writeln!(out, "## Nodes\n");
    let _ = writeln!(out, "| addr | energy (mAh) | battery | sent | acked | lost | retransmits |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|");
    for n in &r.nodes {
        let _ = writeln!(
            out,
            "| {:#06x} | {:.3} | {:.2}% | {} | {} | {} | {} |",
            n.addr,
            n.energy_used_mah,
            f64::from(n.battery_centi_pct) / 100.0,
            n.stats.data_sent,
            n.stats.data_acked,
            n.stats.data_lost,
            n.stats.retransmits
        );
    }
    out
}
