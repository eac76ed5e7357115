use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use hatchsens_bench::{data_frames, sweep};
use hatchsens_core::config::PlantConfig;
use hatchsens_core::radio::{decode_frame, encode_frame, FRAME_LEN};
use hatchsens_core::{
    classify, crc16, default_thresholds, param_score, plant, suitability, Gateway, RunConfig, SensorKind, SimOptions,
    Simulation, Snapshot,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn codec(c: &mut Criterion) {
    let frames = data_frames(1024, 1);
    let encoded: Vec<[u8; FRAME_LEN]> = frames.iter().map(|f| encode_frame(f).unwrap()).collect();

    let mut group = c.benchmark_group("codec");
    group.throughput(Throughput::Bytes((FRAME_LEN * frames.len()) as u64));
    group.bench_function("crc16", |b| {
        b.iter(|| encoded.iter().map(|e| crc16(black_box(&e[..18]))).fold(0u16, |a, c| a ^ c))
    });
    group.bench_function("encode", |b| {
        b.iter(|| frames.iter().map(|f| encode_frame(black_box(f)).unwrap()[19]).fold(0u8, |a, c| a ^ c))
    });
    group.bench_function("decode", |b| {
        b.iter(|| encoded.iter().filter(|e| decode_frame(black_box(&e[..])).is_ok()).count())
    });
    group.finish();
}

fn thresholds(c: &mut Criterion) {
    let thr = default_thresholds();
    let band = thr.temperature;
    let values = sweep(band.hard_lo(), band.hard_hi(), 4096);

    let mut group = c.benchmark_group("thresholds");
    group.throughput(Throughput::Elements(values.len() as u64));
    group.bench_function("classify", |b| {
        b.iter(|| values.iter().filter(|v| classify(black_box(**v), &band).unwrap().is_hard()).count())
    });
    group.bench_function("param_score", |b| {
        b.iter(|| values.iter().map(|v| param_score(black_box(*v), &band).unwrap()).sum::<f64>())
    });
    let mut snap = Snapshot::default();
    for (kind, v) in [(SensorKind::TemperatureC, 27.0), (SensorKind::Ph, 8.0), (SensorKind::DissolvedO2MgPerL, 6.0)] {
        snap.set(kind, v);
    }
    snap.set(SensorKind::LightLux, 2000.0);
    group.throughput(Throughput::Elements(1));
    group.bench_function("suitability", |b| b.iter(|| suitability(black_box(&snap), &thr).unwrap()));
    group.finish();
}

fn plant_step(c: &mut Criterion) {
    let cfg = PlantConfig::default();
    let params = cfg.params();
    let start = cfg.initial_state();
    c.bench_function("plant/step_1h", |b| {
        b.iter_batched(
            || (start.clone(), ChaCha8Rng::seed_from_u64(2)),
            |(mut s, mut rng)| {
                for _ in 0..3600 {
                    s = plant::step(&s, &params, &mut rng);
                }
                s
            },
            BatchSize::SmallInput,
        )
    });
}

fn ingest(c: &mut Criterion) {
    let encoded: Vec<[u8; FRAME_LEN]> = data_frames(4096, 3).iter().map(|f| encode_frame(f).unwrap()).collect();
    let mut group = c.benchmark_group("gateway");
    group.throughput(Throughput::Elements(encoded.len() as u64));
    group.bench_function("ingest", |b| {
        b.iter_batched(
            || Gateway::new(default_thresholds()),
            |mut gw| {
                for (i, e) in encoded.iter().enumerate() {
                    gw.ingest(e, (i / 5) as f64 * 60.0);
                }
                gw
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn short_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("sim");
    group.sample_size(10);
    group.bench_function("six_hours", |b| {
        b.iter(|| {
            let mut sim = Simulation::new(RunConfig::default(), 42, SimOptions::free_running());
            sim.run_until(6 * 3600 * 1000).unwrap();
            sim.now_s()
        })
    });
    group.finish();
}

criterion_group!(benches, codec, thresholds, plant_step, ingest, short_run);
criterion_main!(benches);
