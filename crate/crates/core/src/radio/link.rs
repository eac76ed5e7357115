//! Seeded lossy star medium between the nodes and the gateway.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Sim time in milliseconds.
pub type SimMillis = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub loss_probability: f64,
    pub base_ms: f64,
    pub jitter_ms: f64,
    pub bitflip_probability: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams { loss_probability: 0.0, base_ms: 5.0, jitter_ms: 5.0, bitflip_probability: 0.0 }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), String> {
        let p_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !p_ok(self.loss_probability) || !p_ok(self.bitflip_probability) {
            return Err("link probabilities must be in [0, 1]".into());
        }
        if !(self.base_ms.is_finite() && self.base_ms >= 0.0 && self.jitter_ms.is_finite() && self.jitter_ms >= 0.0) {
            return Err("link latencies must be finite and >= 0".into());
        }
        Ok(())
    }
}

/// Per-direction overrides; unset fields fall back to the shared values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelOverride {
    pub loss_probability: Option<f64>,
    pub base_ms: Option<f64>,
    pub jitter_ms: Option<f64>,
    pub bitflip_probability: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkParams {
    #[serde(flatten)]
    pub shared: ChannelParams,
    pub uplink: ChannelOverride,
    pub downlink: ChannelOverride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl LinkParams {
    pub fn lossless() -> LinkParams {
        LinkParams::default()
    }

    pub fn with_loss(p: f64) -> LinkParams {
        LinkParams { shared: ChannelParams { loss_probability: p, ..Default::default() }, ..Default::default() }
    }

    pub fn channel(&self, dir: Direction) -> ChannelParams {
        let o = match dir {
            Direction::Up => &self.uplink,
            Direction::Down => &self.downlink,
        };
        let s = self.shared;
        ChannelParams {
            loss_probability: o.loss_probability.unwrap_or(s.loss_probability),
            base_ms: o.base_ms.unwrap_or(s.base_ms),
            jitter_ms: o.jitter_ms.unwrap_or(s.jitter_ms),
            bitflip_probability: o.bitflip_probability.unwrap_or(s.bitflip_probability),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.channel(Direction::Up).validate()?;
        self.channel(Direction::Down).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transmission {
    Delivered { arrive_ms: SimMillis, bytes: Vec<u8>, corrupted: bool },
    Dropped,
}

pub fn transmit<R: Rng + ?Sized>(link: &ChannelParams, bytes: &[u8], now_ms: SimMillis, rng: &mut R) -> Transmission {
    if link.loss_probability > 0.0 && rng.random::<f64>() < link.loss_probability {
        return Transmission::Dropped;
    }
    let jitter = if link.jitter_ms > 0.0 { rng.random::<f64>() * link.jitter_ms } else { 0.0 };
    let arrive_ms = now_ms + (link.base_ms + jitter).round() as u64;
    let mut bytes = bytes.to_vec();
    let mut corrupted = false;
    if link.bitflip_probability > 0.0 && !bytes.is_empty() && rng.random::<f64>() < link.bitflip_probability {
        let bit = rng.random_range(0..bytes.len() * 8);
        bytes[bit / 8] ^= 1 << (bit % 8);
        corrupted = true;
    }
    Transmission::Delivered { arrive_ms, bytes, corrupted }
}
