use std::collections::BTreeMap;

use hatchsens_core::model::{validate_culture, CultureSpec, PrepReport};
use hatchsens_core::parmi::NodeEvidence;
use hatchsens_core::{default_thresholds, AdvanceError, GateEvidence, Orchestrator, RunPhase, SensorKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Culture acceptability straight from the hatching table: 5 to 8 ppt and
// at most 10 g of cysts per litre.
fn culture_ok(spec: &CultureSpec) -> bool {
    (5.0..=8.0).contains(&spec.salinity_ppt) && spec.cysts_g / spec.volume_l <= 10.0
}

fn random_spec(rng: &mut ChaCha8Rng) -> CultureSpec {
    CultureSpec {
        salinity_ppt: f64::from(rng.random_range(30..100)) / 10.0,
        cysts_g: f64::from(rng.random_range(0..30)),
        volume_l: f64::from(rng.random_range(1..4)),
        ..CultureSpec::bench_default()
    }
}

fn random_evidence(rng: &mut ChaCha8Rng, now: f64) -> (GateEvidence, Option<CultureSpec>) {
    let thr = default_thresholds();
    let spec = rng.random_bool(0.8).then(|| random_spec(rng));
    let culture = match &spec {
        Some(s) => Some(validate_culture(s, &thr).unwrap()),
        // occasionally a hand-built report that claims failure without reasons
        None if rng.random_bool(0.3) => Some(PrepReport { pass: false, density_g_per_l: 0.5, violations: vec![] }),
        None => None,
    };
    let nodes = (0..rng.random_range(0..3))
        .map(|i| NodeEvidence {
            addr: i + 1,
            kinds: SensorKind::ALL.into_iter().filter(|_| rng.random_bool(0.9)).collect(),
            heartbeat_acked: rng.random_bool(0.7),
        })
        .collect();
    let mut latest_reading_t = BTreeMap::new();
    for k in SensorKind::ALL {
        if rng.random_bool(0.9) {
            latest_reading_t.insert(k, now - f64::from(rng.random_range(0..400)));
        }
    }
    let ev = GateEvidence {
        culture_prepared: rng.random_bool(0.8),
        culture,
        aerator_on: rng.random_bool(0.7),
        nodes,
        latest_reading_t,
        h_est: rng.random(),
        max_duration_s: 129_600.0,
        operator_stop: rng.random_bool(0.1),
    };
    let spec = if ev.culture.as_ref().is_some_and(|r| r.pass) { spec } else { None };
    (ev, spec)
}

#[test]
fn monitoring_needs_a_passing_culture() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA8);
    let mut reached_monitoring = 0;
    for _ in 0..10_000 {
        let mut orch = Orchestrator::new(0.0);
        let mut accepted_culture: Option<Option<CultureSpec>> = None;
        let mut now = 0.0;
        for _ in 0..40 {
            now += f64::from(rng.random_range(0..120));
            let (ev, spec) = random_evidence(&mut rng, now);
            let before = orch.current();
            let result = if rng.random_bool(0.2) {
                let target = RunPhase::ALL[rng.random_range(0..RunPhase::ALL.len())];
                orch.advance_to(target, &ev, now)
            } else {
                orch.advance(&ev, now)
            };
            match result {
                Ok(to) => {
                    assert_eq!(Some(to), before.next());
                    if before == RunPhase::CulturePrep {
                        accepted_culture = Some(spec);
                    }
                }
                Err(AdvanceError::OrderViolation { current, .. }) => assert_eq!(current, before),
                Err(AdvanceError::GateBlocked { phase, reasons }) => {
                    assert_eq!(phase, before);
                    assert!(!reasons.is_empty());
                }
                Err(AdvanceError::Finished) => assert_eq!(before, RunPhase::Analysis),
            }
            assert!(orch.history().windows(2).all(|w| w[0].entered_t < w[1].entered_t));
            assert!(orch.history().windows(2).all(|w| w[0].phase.next() == Some(w[1].phase)));
        }
        if orch.entered_t(RunPhase::Monitoring).is_some() {
            reached_monitoring += 1;
            let spec = accepted_culture.expect("left culture prep").expect("culture report passed");
            assert!(culture_ok(&spec), "monitoring reached with {spec:?}");
        }
    }
    assert!(reached_monitoring > 0);
}
