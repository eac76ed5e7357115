use hatchsens_core::{
    classify, default_thresholds, param_score, suitability, Band, Classification, SensorKind, Snapshot,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Five-way oracle written straight from the class definitions, checking
// the soft classes by their two-sided intervals.
fn naive_classify(v: f64, lo_h: f64, lo_s: f64, hi_s: f64, hi_h: f64) -> Classification {
    if v > hi_h {
        Classification::HighHard
    } else if v < lo_h {
        Classification::LowHard
    } else if hi_s < v && v <= hi_h {
        Classification::HighSoft
    } else if lo_h <= v && v < lo_s {
        Classification::LowSoft
    } else {
        Classification::InRange
    }
}

fn random_edges(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let mut e = [0.0; 4];
    for x in e.iter_mut() {
        // coarse grid so coincident edges and on-edge values come up often
        *x = f64::from(rng.random_range(-40..40)) * 0.5;
    }
    e.sort_by(f64::total_cmp);
    e
}

#[test]
fn classify_matches_naive_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA2);
    for _ in 0..100_000 {
        let [a, b, c, d] = random_edges(&mut rng);
        let band = Band::new(a, b, c, d).unwrap();
        let v = if rng.random_bool(0.3) { [a, b, c, d][rng.random_range(0..4)] } else { rng.random_range(-25.0..25.0) };
        assert_eq!(classify(v, &band).unwrap(), naive_classify(v, a, b, c, d), "v={v} band={band:?}");
    }
}

#[test]
fn classify_rejects_nan() {
    let band = default_thresholds().ph;
    assert!(classify(f64::NAN, &band).is_err());
    assert!(param_score(f64::NAN, &band).is_err());
}

#[test]
fn ph_examples() {
    let ph = default_thresholds().ph;
    assert_eq!(classify(8.0, &ph).unwrap(), Classification::InRange);
    assert_eq!(classify(8.5, &ph).unwrap(), Classification::InRange);
    assert_eq!(classify(9.0, &ph).unwrap(), Classification::HighSoft);
    assert_eq!(classify(9.3, &ph).unwrap(), Classification::HighHard);
}

#[test]
fn param_score_continuity_scan() {
    let thr = default_thresholds();
    for kind in SensorKind::ALL {
        let band = *thr.band(kind).unwrap();
        let min_ramp = (band.soft_lo() - band.hard_lo()).min(band.hard_hi() - band.soft_hi());
        let span = band.hard_hi() - band.hard_lo() + 2.0;
        let step = span / 200_000.0;
        let bound = step / min_ramp + 1e-12;
        let mut prev = param_score(band.hard_lo() - 1.0, &band).unwrap();
        let mut x = band.hard_lo() - 1.0;
        while x < band.hard_hi() + 1.0 {
            x += step;
            let s = param_score(x, &band).unwrap();
            assert!((s - prev).abs() <= bound, "{kind:?} jump at {x}: {prev} -> {s}");
            assert!((0.0..=1.0).contains(&s));
            prev = s;
        }
    }
}

#[test]
fn temperature_ramp_example() {
    let t = default_thresholds().temperature;
    assert_eq!(param_score(21.0, &t).unwrap(), 0.5);
    assert_eq!(param_score(t.hard_lo(), &t).unwrap(), 0.0);
    assert_eq!(param_score(t.soft_midpoint(), &t).unwrap(), 1.0);
}

fn band_strategy() -> impl Strategy<Value = Band> {
    prop::array::uniform4(-100.0f64..100.0).prop_filter_map("distinct ramps", |mut e| {
        e.sort_by(f64::total_cmp);
        (e[1] - e[0] > 1e-6 && e[3] - e[2] > 1e-6).then(|| Band::new(e[0], e[1], e[2], e[3]).unwrap())
    })
}

proptest! {
    #[test]
    fn hard_iff_zero_and_in_range_implies_one(band in band_strategy(), v in -150.0f64..150.0) {
        let c = classify(v, &band).unwrap();
        let s = param_score(v, &band).unwrap();
        let on_hard_edge = v == band.hard_lo() || v == band.hard_hi();
        if !on_hard_edge {
            prop_assert_eq!(c.is_hard(), s == 0.0);
        }
        if c == Classification::InRange {
            prop_assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn suitability_monotone_toward_soft_band(
        temp in 10.0f64..40.0,
        ph in 5.0f64..10.0,
        o2 in 0.0f64..25.0,
        light in 0.0f64..250_000.0,
        which in 0usize..4,
        frac in 0.0f64..1.0,
    ) {
        let thr = default_thresholds();
        let kinds = SensorKind::SUITABILITY;
        let base = Snapshot::default()
            .with(SensorKind::TemperatureC, temp)
            .with(SensorKind::Ph, ph)
            .with(SensorKind::DissolvedO2MgPerL, o2)
            .with(SensorKind::LightLux, light);
        let kind = kinds[which];
        let band = thr.band(kind).unwrap();
        let v = base.get(kind).unwrap();
        let target = v.clamp(band.soft_lo(), band.soft_hi());
        let improved = base.with(kind, v + (target - v) * frac);
        prop_assert!(suitability(&improved, &thr).unwrap() >= suitability(&base, &thr).unwrap());
    }
}

#[test]
fn suitability_examples() {
    let thr = default_thresholds();
    let mid = |k: SensorKind| thr.band(k).unwrap().soft_midpoint();
    let mut snap = Snapshot::default();
    for k in SensorKind::SUITABILITY {
        snap.set(k, mid(k));
    }
    assert_eq!(suitability(&snap, &thr).unwrap(), 1.0);
    assert_eq!(suitability(&snap.with(SensorKind::TemperatureC, 21.0), &thr).unwrap(), 0.5);
    assert_eq!(suitability(&snap.with(SensorKind::Ph, 9.2), &thr).unwrap(), 0.0);
    let missing = Snapshot::default().with(SensorKind::TemperatureC, 25.0);
    assert!(suitability(&missing, &thr).is_err());
}
