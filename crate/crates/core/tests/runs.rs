use std::fs;
use std::path::Path;

use hatchsens_core::gateway::alerts::{Severity, TransitionKind};
use hatchsens_core::gateway::persist::{self, PersistError, ALERTS, PHASES, READINGS, REPORT};
use hatchsens_core::node::EnergyModel;
use hatchsens_core::plant::Preset;
use hatchsens_core::radio::ChannelParams;
use hatchsens_core::runner::{replay, run_batch, ReplayError};
use hatchsens_core::{
    Command, CommandStatus, LinkParams, NodeConfig, PhaseRecord, RunConfig, RunOutcome, RunPhase, SimOptions,
    Simulation,
};
use tempfile::TempDir;

const EPOCH: &str = "2026-01-01T00:00:00Z";

fn batch(cfg: &RunConfig, seed: u64) -> (TempDir, hatchsens_core::runner::BatchResult) {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("run");
    let res = run_batch(cfg, seed, &dir, EPOCH.into()).unwrap();
    (tmp, res)
}

fn phase_records(dir: &Path) -> Vec<PhaseRecord> {
    persist::read_lines(&dir.join(PHASES)).unwrap()
}

fn last_transition(records: &[PhaseRecord]) -> Option<RunPhase> {
    records.iter().rev().find_map(|r| match r {
        PhaseRecord::Transition { to, .. } => Some(*to),
        _ => None,
    })
}

#[test]
fn ideal_run_reaches_analysis_near_a_day() {
    let (_tmp, res) = batch(&RunConfig::default(), 42);
    assert_eq!(res.outcome, RunOutcome::Completed);
    let analysis = res.report.phases.iter().find(|p| p.phase == RunPhase::Analysis).unwrap();
    assert!(analysis.entered_t <= 86_400.0 + 120.0, "{}", analysis.entered_t);
    let crossing = res.report.hatch.first_crossing_t.unwrap();
    assert!((crossing - 86_400.0).abs() <= 120.0, "{crossing}");
    let phases: Vec<RunPhase> = res.report.phases.iter().map(|p| p.phase).collect();
    assert_eq!(phases, RunPhase::ALL.to_vec());
    for tir in res.report.time_in_range.values() {
        assert!((0.0..=1.0).contains(&tir.fraction));
    }
    assert_eq!(res.report.alerts.total_raised, 0);
}

#[test]
fn same_seed_same_bytes_and_replay_reproduces_report() {
    let cfg = RunConfig {
        plant: hatchsens_core::config::PlantConfig { preset: Preset::Noisy, ..Default::default() },
        link: LinkParams::with_loss(0.1),
        ..RunConfig::default()
    };
    let (_a, ra) = batch(&cfg, 7);
    let (_b, rb) = batch(&cfg, 7);
    for file in [READINGS, ALERTS, REPORT] {
        let x = fs::read(ra.dir.join(file)).unwrap();
        let y = fs::read(rb.dir.join(file)).unwrap();
        assert!(x == y, "{file} differs");
    }
    let before = fs::read(ra.dir.join(REPORT)).unwrap();
    let rep = replay(&ra.dir).unwrap();
    assert!(rep.alerts_match);
    assert_eq!(rep.report_match, Some(true));
    assert_eq!(fs::read(ra.dir.join(REPORT)).unwrap(), before);
}

#[test]
fn different_seed_changes_noisy_readings() {
    let cfg = RunConfig {
        plant: hatchsens_core::config::PlantConfig { preset: Preset::Noisy, ..Default::default() },
        max_duration_s: 3600.0,
        ..RunConfig::default()
    };
    let (_a, ra) = batch(&cfg, 1);
    let (_b, rb) = batch(&cfg, 2);
    assert_ne!(fs::read(ra.dir.join(READINGS)).unwrap(), fs::read(rb.dir.join(READINGS)).unwrap());
}

#[test]
fn truncated_readings_name_file_and_line() {
    let cfg = RunConfig { max_duration_s: 1800.0, ..RunConfig::default() };
    let (_tmp, res) = batch(&cfg, 3);
    let path = res.dir.join(READINGS);
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let cut = format!("{}\n{}\n{}", lines[0], lines[1], &lines[2][..lines[2].len() / 2]);
    fs::write(&path, cut).unwrap();
    match replay(&res.dir) {
        Err(ReplayError::Persist(PersistError::Corrupt { path, line, .. })) => {
            assert!(path.ends_with(READINGS));
            assert_eq!(line, 3);
        }
        other => panic!("expected corrupt readings, got {other:?}"),
    }
}

#[test]
fn replay_of_empty_dir_is_not_a_run() {
    let tmp = TempDir::new().unwrap();
    assert!(matches!(replay(tmp.path()), Err(ReplayError::NotARun(_))));
}

#[test]
fn salty_culture_blocks_at_prep() {
    let mut cfg = RunConfig::default();
    cfg.culture.salinity_ppt = 9.0;
    let (_tmp, res) = batch(&cfg, 42);
    assert_eq!(res.outcome, RunOutcome::GateBlocked);
    let records = phase_records(&res.dir);
    assert_eq!(last_transition(&records), Some(RunPhase::CulturePrep));
    let reasons: Vec<&String> = records
        .iter()
        .filter_map(|r| match r {
            PhaseRecord::Blocked { reasons, .. } => Some(reasons),
            _ => None,
        })
        .flatten()
        .collect();
    assert!(reasons.iter().any(|r| r.contains("salinity") && r.contains('8')), "{reasons:?}");
    assert_eq!(res.report.readings, 0);
}

#[test]
fn dense_culture_blocks_at_prep() {
    let mut cfg = RunConfig::default();
    // 25 g in 2 L = 12.5 g/L
    cfg.culture.cysts_g = 25.0;
    let (_tmp, res) = batch(&cfg, 42);
    assert_eq!(res.outcome, RunOutcome::GateBlocked);
    assert_eq!(last_transition(&phase_records(&res.dir)), Some(RunPhase::CulturePrep));
}

#[test]
fn aerator_not_attested_blocks_at_aeration() {
    let mut cfg = RunConfig::default();
    cfg.attestations.aerator_on = false;
    let (_tmp, res) = batch(&cfg, 42);
    assert_eq!(res.outcome, RunOutcome::GateBlocked);
    let records = phase_records(&res.dir);
    assert_eq!(last_transition(&records), Some(RunPhase::AerationOn));
    let blocked: Vec<_> = records.iter().filter(|r| matches!(r, PhaseRecord::Blocked { .. })).collect();
    assert_eq!(blocked.len(), 1, "blocked records are written once per distinct reason set");
    assert!(matches!(records.last(), Some(PhaseRecord::RunEnd { outcome: RunOutcome::GateBlocked, .. })));
}

#[test]
fn cold_room_runs_to_max_duration_with_soft_alert() {
    let cfg = RunConfig {
        plant: hatchsens_core::config::PlantConfig { preset: Preset::ColdRoom, ..Default::default() },
        ..RunConfig::default()
    };
    let (_tmp, res) = batch(&cfg, 42);
    assert_eq!(res.outcome, RunOutcome::Completed);
    assert_eq!(res.report.end_t, cfg.max_duration_s);
    assert!(res.report.hatch.first_crossing_t.is_none());
    // suitability 0.5 gives H = 129600 * 0.5 / 86400 at the cutoff
    assert!((res.report.hatch.final_h_est - 0.75).abs() < 0.01, "{}", res.report.hatch.final_h_est);
    let temp = res.report.alerts.raised.get("temperature").unwrap();
    assert_eq!(temp.get("soft"), Some(&1));
}

#[test]
fn half_suitability_doubles_hatch_time() {
    let cfg = RunConfig {
        plant: hatchsens_core::config::PlantConfig { preset: Preset::ColdRoom, ..Default::default() },
        max_duration_s: 200_000.0,
        ..RunConfig::default()
    };
    let (_tmp, res) = batch(&cfg, 42);
    // The gateway sees 21 °C through a 10-bit ADC over 0..50 °C: 430 counts,
    // reported as 21.02 °C, which scores 3.02 / 6 on the temperature ramp.
    let counts = (21.0f64 / 50.0 * 1023.0).round();
    let seen = (counts * 50.0 / 1023.0 * 100.0).round() / 100.0;
    let expected = 0.999 * 86_400.0 / ((seen - 18.0) / 6.0);
    let crossing = res.report.hatch.first_crossing_t.unwrap();
    assert!((crossing - expected).abs() <= 120.0, "{crossing} vs {expected}");
    assert!(crossing > 2.0 * 86_400.0 - 2_000.0);
}

#[test]
fn feeding_advisory_once_at_eighteen_hours() {
    let (_tmp, res) = batch(&RunConfig::default(), 42);
    let advisories: Vec<f64> = phase_records(&res.dir)
        .iter()
        .filter_map(|r| match r {
            PhaseRecord::Advisory { t, .. } => Some(*t),
            _ => None,
        })
        .collect();
    assert_eq!(advisories, vec![64_800.0]);
    assert_eq!(res.report.feeding_advisory_t, Some(64_800.0));
}

#[test]
fn estimate_tracks_ground_truth() {
    let mut sim = Simulation::new(RunConfig::default(), 42, SimOptions::for_mode(hatchsens_core::Mode::Batch));
    let mut worst: f64 = 0.0;
    for minute in 1..=1440u64 {
        sim.run_until(minute * 60_000).unwrap();
        if sim.is_finished() {
            break;
        }
        let t = sim.now_s();
        let err = (sim.gateway().h_at(t) - sim.plant().hatch_fraction).abs();
        worst = worst.max(err);
    }
    assert!(worst <= 0.02, "max |h_est - H| = {worst}");
}

fn free_sim(link: LinkParams) -> Simulation {
    let cfg = RunConfig { link, ..RunConfig::default() };
    Simulation::new(cfg, 5, SimOptions::free_running())
}

#[test]
fn set_interval_acked_on_clean_link() {
    let mut sim = free_sim(LinkParams::lossless());
    sim.run_until(61_000).unwrap();
    let rec = sim.gateway_mut().dispatch_command(1, Command::SetInterval(30), 61.0).unwrap();
    assert_eq!(rec.status, CommandStatus::Pending);
    sim.run_until(200_000).unwrap();
    assert_eq!(sim.gateway().command(rec.id).unwrap().status, CommandStatus::Acked);
    assert_eq!(sim.nodes()[0].sampling_interval_s, 30);
    assert_eq!(sim.gateway().node(1).unwrap().sampling_interval_s, 30);
}

#[test]
fn command_times_out_when_downlink_is_dead() {
    let link = LinkParams {
        downlink: hatchsens_core::radio::ChannelOverride { loss_probability: Some(1.0), ..Default::default() },
        ..LinkParams::lossless()
    };
    let mut sim = free_sim(link);
    sim.run_until(61_000).unwrap();
    let rec = sim.gateway_mut().dispatch_command(1, Command::SetInterval(30), 61.0).unwrap();
    sim.run_until(600_000).unwrap();
    assert_eq!(sim.gateway().command(rec.id).unwrap().status, CommandStatus::TimedOut);
    assert_eq!(sim.nodes()[0].sampling_interval_s, 60);
}

#[test]
fn exhausted_battery_raises_silence() {
    let node =
        NodeConfig { energy: EnergyModel { capacity_mah: 0.05, ..Default::default() }, ..NodeConfig::all_kinds(1) };
    let cfg = RunConfig { nodes: vec![node], ..RunConfig::default() };
    let mut sim = Simulation::new(cfg, 9, SimOptions::free_running());
    sim.run_until(4 * 3600 * 1000).unwrap();
    assert!(sim.nodes()[0].is_exhausted());
    let silent: Vec<_> = sim.gateway().alerts().open().filter(|a| a.severity == Severity::NodeSilent).collect();
    assert_eq!(silent.len(), 1);
    assert_eq!(silent[0].node, Some(1));
}

#[test]
fn lossy_uplink_still_completes() {
    let link =
        LinkParams { shared: ChannelParams { loss_probability: 0.3, ..Default::default() }, ..Default::default() };
    let (_tmp, res) = batch(&RunConfig { link, ..RunConfig::default() }, 42);
    assert_eq!(res.outcome, RunOutcome::Completed);
    let node = &res.report.nodes[0];
    assert!(node.stats.data_lost > 0);
    let s = node.stats;
    // only the last cycle's frames can still be in flight at the end
    assert!(s.data_sent - s.data_acked - s.data_lost <= 5, "{s:?}");
    assert!(node.link.duplicate > 0);
    let alerts: Vec<hatchsens_core::gateway::alerts::AlertTransition> =
        persist::read_lines(&res.dir.join(ALERTS)).unwrap();
    assert!(alerts.iter().all(|a| a.transition != TransitionKind::Acked));
}
