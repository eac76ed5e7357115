use std::collections::{BTreeMap, HashSet};

use hatchsens_core::gateway::alerts::{AlertTransition, TransitionKind};
use hatchsens_core::radio::{decode_frame, FrameType, FRAME_LEN, GATEWAY_ADDR};
use hatchsens_core::{crc16, default_thresholds, Event, Frame, Gateway, IngestOutcome, Reading, SensorKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn valid_data(rng: &mut ChaCha8Rng) -> [u8; FRAME_LEN] {
    let kind = SensorKind::ALL[rng.random_range(0..5)];
    let f = Frame::data(rng.random_range(1..4), rng.random(), kind, rng.random_range(0..100_000), rng.random());
    f.encode().unwrap()
}

/// Mix of pure noise, noise with a good header, mutated valid frames and
/// noise with a recomputed crc.
fn fuzz_input(rng: &mut ChaCha8Rng) -> Vec<u8> {
    match rng.random_range(0..4) {
        0 => {
            let len = rng.random_range(0..40);
            (0..len).map(|_| rng.random()).collect()
        }
        1 => {
            let mut b: Vec<u8> = (0..FRAME_LEN).map(|_| rng.random()).collect();
            b[0] = 0xA5;
            b[1] = 0x01;
            b
        }
        2 => {
            let mut b = valid_data(rng).to_vec();
            for _ in 0..rng.random_range(1..4) {
                let i = rng.random_range(0..FRAME_LEN);
                b[i] = rng.random();
            }
            b
        }
        _ => {
            let mut b: Vec<u8> = (0..FRAME_LEN).map(|_| rng.random()).collect();
            b[0] = 0xA5;
            b[1] = 0x01;
            b[2] = rng.random_range(0..6);
            b[5] = 0;
            b[6] = 0;
            let c = crc16(&b[..18]);
            b[18..].copy_from_slice(&c.to_be_bytes());
            b
        }
    }
}

#[test]
fn fuzzed_bytes_never_crash_or_falsely_accept() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA9);
    let mut gw = Gateway::new(default_thresholds());
    let mut accepted = 0u64;
    for i in 0..1_000_000u32 {
        let bytes = fuzz_input(&mut rng);
        if let IngestOutcome::Accepted(r) = gw.ingest(&bytes, f64::from(i / 100)) {
            let f = decode_frame(&bytes).expect("accepted bytes must decode");
            assert_eq!(f.ftype, FrameType::Data);
            assert_eq!(f.dst, GATEWAY_ADDR);
            assert_eq!((r.node, r.seq, r.centi), (f.src, f.seq, f.payload));
            accepted += 1;
        }
        if i % 4096 == 0 {
            gw.drain_events();
            gw.take_downlink();
        }
    }
    assert_eq!(gw.counters().accepted, accepted);
}

proptest! {
    #[test]
    fn dedup_store_counts_distinct_frames(
        frames in prop::collection::vec((1u16..4, 0u16..400, 0usize..5), 1..120),
        dup_picks in prop::collection::vec(any::<prop::sample::Index>(), 0..200),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // one frame per (src, seq), as a node would send it
        let mut by_id = BTreeMap::new();
        for (src, seq, k) in frames {
            by_id.entry((src, seq)).or_insert_with(|| Frame::data(src, seq, SensorKind::ALL[k], u32::from(seq), 2500));
        }
        let unique: Vec<Frame> = by_id.into_values().collect();
        let mut schedule = unique.clone();
        for pick in &dup_picks {
            schedule.push(*pick.get(&unique));
        }
        for i in (1..schedule.len()).rev() {
            schedule.swap(i, rng.random_range(0..=i));
        }
        let mut gw = Gateway::new(default_thresholds());
        for (i, f) in schedule.iter().enumerate() {
            gw.ingest(&f.encode().unwrap(), i as f64);
        }
        let distinct: HashSet<(u16, u16, SensorKind)> = unique.iter().map(|f| (f.src, f.seq, f.sensor_kind().unwrap())).collect();
        prop_assert_eq!(gw.readings().len(), distinct.len());
        prop_assert_eq!(gw.counters().duplicates as usize, schedule.len() - unique.len());
    }

    #[test]
    fn alerts_alternate_per_key(values in prop::collection::vec(1500i32..4000, 1..400)) {
        let mut gw = Gateway::new(default_thresholds());
        for (i, centi) in values.iter().enumerate() {
            let r = Reading { node: 1, kind: SensorKind::TemperatureC, seq: i as u16, t: i as u32 * 60, centi: *centi };
            gw.accept_reading(r, f64::from(r.t));
        }
        let transitions: Vec<AlertTransition> = gw
            .drain_events()
            .into_iter()
            .filter_map(|e| match e { Event::Alert(t) => Some(t), _ => None })
            .collect();
        let mut open: BTreeMap<String, bool> = BTreeMap::new();
        for tr in transitions {
            let key = format!("{:?}/{:?}/{:?}", tr.alert.source, tr.alert.direction, tr.alert.severity);
            let was = open.get(&key).copied().unwrap_or(false);
            match tr.transition {
                TransitionKind::Raised => { prop_assert!(!was, "double raise {}", key); open.insert(key, true); }
                TransitionKind::Cleared => { prop_assert!(was, "clear without raise {}", key); open.insert(key, false); }
                TransitionKind::Acked => {}
            }
        }
        prop_assert!(gw.alerts().open().count() == open.values().filter(|v| **v).count());
    }
}

#[test]
fn empty_history_has_no_state() {
    let gw = Gateway::new(default_thresholds());
    assert!(gw.readings().is_empty());
    assert_eq!(gw.alerts().all().count(), 0);
    assert!(gw.hatch(0.0).is_none());
}
