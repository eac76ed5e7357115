//! Fixtures shared by the benchmarks in `benches/`.

use hatchsens_core::{Frame, SensorKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// DATA frames from a handful of nodes, as a gateway would see them.
pub fn data_frames(n: usize, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let kind = SensorKind::ALL[i % 5];
            Frame::data(rng.random_range(1..9), i as u16, kind, (i / 5) as u32 * 60, rng.random_range(0..5000))
        })
        .collect()
}

/// Values spread over and beyond a band's hard limits.
pub fn sweep(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let pad = (hi - lo) * 0.25;
    (0..n).map(|i| lo - pad + (hi - lo + 2.0 * pad) * i as f64 / n as f64).collect()
}
