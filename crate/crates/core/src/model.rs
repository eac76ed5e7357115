//! Shared domain types: sensor kinds, readings, threshold bands and the
//! hatching suitability score.
//!
//! Bands are trapezoids. The soft band is the recommended operating range,
//! the hard band is where conditions stop supporting hatching at all. Every
//! band edge belongs to the more benign class.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid reading: value is NaN")]
    InvalidReading,
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("invalid culture spec: {0}")]
    InvalidSpec(String),
    #[error("incomplete snapshot: missing {0}")]
    IncompleteSnapshot(SensorKind),
}

/// Real to integer conversion used everywhere: half away from zero.
pub fn round_half_away(x: f64) -> f64 {
    // f64::round already rounds ties away from zero.
    x.round()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SensorKind {
    #[serde(rename = "temperature")]
    TemperatureC,
    #[serde(rename = "ph")]
    Ph,
    #[serde(rename = "o2")]
    DissolvedO2MgPerL,
    #[serde(rename = "humidity")]
    HumidityPct,
    #[serde(rename = "light")]
    LightLux,
}

impl SensorKind {
    pub const ALL: [SensorKind; 5] = [
        SensorKind::TemperatureC,
        SensorKind::Ph,
        SensorKind::DissolvedO2MgPerL,
        SensorKind::HumidityPct,
        SensorKind::LightLux,
    ];

    /// Kinds that enter the suitability product. Humidity is room air and
    /// is only monitored.
    pub const SUITABILITY: [SensorKind; 4] =
        [SensorKind::TemperatureC, SensorKind::Ph, SensorKind::DissolvedO2MgPerL, SensorKind::LightLux];

    pub fn code(self) -> u8 {
        match self {
            SensorKind::TemperatureC => 0x01,
            SensorKind::Ph => 0x02,
            SensorKind::DissolvedO2MgPerL => 0x03,
            SensorKind::HumidityPct => 0x04,
            SensorKind::LightLux => 0x05,
        }
    }

    pub fn from_code(code: u8) -> Option<SensorKind> {
        SensorKind::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn unit(self) -> &'static str {
        match self {
            SensorKind::TemperatureC => "°C",
            SensorKind::Ph => "pH",
            SensorKind::DissolvedO2MgPerL => "mg/L",
            SensorKind::HumidityPct => "%",
            SensorKind::LightLux => "lux",
        }
    }

    /// Stable lowercase name, identical to the serialized form.
    pub fn name(self) -> &'static str {
        match self {
            SensorKind::TemperatureC => "temperature",
            SensorKind::Ph => "ph",
            SensorKind::DissolvedO2MgPerL => "o2",
            SensorKind::HumidityPct => "humidity",
            SensorKind::LightLux => "light",
        }
    }

    pub fn from_name(name: &str) -> Option<SensorKind> {
        SensorKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub(crate) fn index(self) -> usize {
        (self.code() - 1) as usize
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One calibrated measurement as it travels from node to gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reading {
    pub node: u16,
    pub kind: SensorKind,
    pub seq: u16,
    /// Seconds since run epoch.
    pub t: u32,
    /// Engineering value in hundredths of the kind's unit.
    pub centi: i32,
}

impl Reading {
    pub fn value(&self) -> f64 {
        f64::from(self.centi) / 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBand")]
pub struct Band {
    hard_lo: f64,
    soft_lo: f64,
    soft_hi: f64,
    hard_hi: f64,
}

#[derive(Deserialize)]
struct RawBand {
    hard_lo: f64,
    soft_lo: f64,
    soft_hi: f64,
    hard_hi: f64,
}

impl TryFrom<RawBand> for Band {
    type Error = ModelError;

    fn try_from(raw: RawBand) -> Result<Self, Self::Error> {
        Band::new(raw.hard_lo, raw.soft_lo, raw.soft_hi, raw.hard_hi)
    }
}

impl Band {
    pub fn new(hard_lo: f64, soft_lo: f64, soft_hi: f64, hard_hi: f64) -> Result<Band, ModelError> {
        if ![hard_lo, soft_lo, soft_hi, hard_hi].iter().all(|v| v.is_finite()) {
            return Err(ModelError::InvalidBand("edges must be finite".into()));
        }
        if !(hard_lo <= soft_lo && soft_lo <= soft_hi && soft_hi <= hard_hi) {
            return Err(ModelError::InvalidBand(format!(
                "expected hard_lo <= soft_lo <= soft_hi <= hard_hi, got {hard_lo}, {soft_lo}, {soft_hi}, {hard_hi}"
            )));
        }
        Ok(Band { hard_lo, soft_lo, soft_hi, hard_hi })
    }

    pub fn hard_lo(&self) -> f64 {
        self.hard_lo
    }
    pub fn soft_lo(&self) -> f64 {
        self.soft_lo
    }
    pub fn soft_hi(&self) -> f64 {
        self.soft_hi
    }
    pub fn hard_hi(&self) -> f64 {
        self.hard_hi
    }

    pub fn soft_midpoint(&self) -> f64 {
        (self.soft_lo + self.soft_hi) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatchThresholds {
    pub temperature: Band,
    pub ph: Band,
    pub o2: Band,
    pub light: Band,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub humidity: Option<Band>,
    pub salinity_ppt: Range,
    pub max_density_g_per_l: f64,
    pub t_hatch_s: f64,
    pub feeding_window_s: Range,
}

impl HatchThresholds {
    pub fn band(&self, kind: SensorKind) -> Option<&Band> {
        match kind {
            SensorKind::TemperatureC => Some(&self.temperature),
            SensorKind::Ph => Some(&self.ph),
            SensorKind::DissolvedO2MgPerL => Some(&self.o2),
            SensorKind::LightLux => Some(&self.light),
            SensorKind::HumidityPct => self.humidity.as_ref(),
        }
    }

    /// Checks the scalar fields; bands are already valid by construction.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidBand(m.to_string()));
        if !(self.salinity_ppt.lo.is_finite() && self.salinity_ppt.lo <= self.salinity_ppt.hi) {
            return bad("salinity range must satisfy lo <= hi");
        }
        if !(self.max_density_g_per_l.is_finite() && self.max_density_g_per_l > 0.0) {
            return bad("max density must be positive");
        }
        if !(self.t_hatch_s.is_finite() && self.t_hatch_s > 0.0) {
            return bad("incubation time must be positive");
        }
        if !(self.feeding_window_s.lo.is_finite() && self.feeding_window_s.lo <= self.feeding_window_s.hi) {
            return bad("feeding window must satisfy lo <= hi");
        }
        Ok(())
    }
}

impl Default for HatchThresholds {
    fn default() -> Self {
        default_thresholds()
    }
}

/// Hatching parameters for brine shrimp cysts: pH 7.2 to 8.5, 25 °C,
/// 5 to 8 ppt salinity, at most 10 g/L of cysts and roughly 24 h of
/// incubation. Hard margins are lab-plausible choices.
pub fn default_thresholds() -> HatchThresholds {
    let band = |a, b, c, d| Band::new(a, b, c, d).expect("default band");
    HatchThresholds {
        temperature: band(18.0, 24.0, 26.0, 35.0),
        ph: band(6.5, 7.2, 8.5, 9.2),
        o2: band(2.0, 5.0, 12.0, 20.0),
        light: band(500.0, 2000.0, 100_000.0, 200_000.0),
        humidity: Some(band(20.0, 40.0, 80.0, 95.0)),
        salinity_ppt: Range { lo: 5.0, hi: 8.0 },
        max_density_g_per_l: 10.0,
        t_hatch_s: 86_400.0,
        feeding_window_s: Range { lo: 64_800.0, hi: 79_200.0 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    InRange,
    LowSoft,
    HighSoft,
    LowHard,
    HighHard,
}

impl Classification {
    pub fn is_hard(self) -> bool {
        matches!(self, Classification::LowHard | Classification::HighHard)
    }
}

pub fn classify(value: f64, band: &Band) -> Result<Classification, ModelError> {
    if value.is_nan() {
        return Err(ModelError::InvalidReading);
    }
    Ok(if value > band.hard_hi {
        Classification::HighHard
    } else if value < band.hard_lo {
        Classification::LowHard
    } else if value > band.soft_hi {
        Classification::HighSoft
    } else if value < band.soft_lo {
        Classification::LowSoft
    } else {
        Classification::InRange
    })
}

/// Trapezoid membership: 1 on the soft band, 0 at or beyond the hard
/// limits, linear in between.
pub fn param_score(value: f64, band: &Band) -> Result<f64, ModelError> {
    if value.is_nan() {
        return Err(ModelError::InvalidReading);
    }
    let b = band;
    let score = if value >= b.soft_lo && value <= b.soft_hi {
        1.0
    } else if value <= b.hard_lo || value >= b.hard_hi {
        0.0
    } else if value < b.soft_lo {
        (value - b.hard_lo) / (b.soft_lo - b.hard_lo)
    } else {
        (b.hard_hi - value) / (b.hard_hi - b.soft_hi)
    };
    Ok(score)
}

/// Latest value per sensor kind. Missing kinds are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot([Option<f64>; 5]);

impl Snapshot {
    pub fn get(&self, kind: SensorKind) -> Option<f64> {
        self.0[kind.index()]
    }

    pub fn set(&mut self, kind: SensorKind, value: f64) {
        self.0[kind.index()] = Some(value);
    }

    pub fn with(mut self, kind: SensorKind, value: f64) -> Self {
        self.set(kind, value);
        self
    }

    pub fn has_suitability_kinds(&self) -> bool {
        SensorKind::SUITABILITY.iter().all(|k| self.get(*k).is_some())
    }
}

/// Product of the trapezoid scores of temperature, pH, O2 and light.
pub fn suitability(snapshot: &Snapshot, thr: &HatchThresholds) -> Result<f64, ModelError> {
    let mut product = 1.0;
    for kind in SensorKind::SUITABILITY {
        let value = snapshot.get(kind).ok_or(ModelError::IncompleteSnapshot(kind))?;
        let band = thr.band(kind).expect("suitability kinds always have a band");
        product *= param_score(value, band)?;
    }
    Ok(product)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CultureSpec {
    pub seawater_parts: u32,
    pub tapwater_parts: u32,
    pub volume_l: f64,
    pub cysts_g: f64,
    /// Entered by hand at preparation time; there is no salinity sensor.
    pub salinity_ppt: f64,
    #[serde(default)]
    pub label: String,
    /// Free-text water quality note ("good", "normal").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub water_quality: Option<String>,
}

impl CultureSpec {
    /// The bench setup: 1:1 sea and tap water, 2 L, 1 g of cysts.
    pub fn bench_default() -> CultureSpec {
        CultureSpec {
            seawater_parts: 1,
            tapwater_parts: 1,
            volume_l: 2.0,
            cysts_g: 1.0,
            salinity_ppt: 6.5,
            label: "artemia hatch 1:1 media".into(),
            water_quality: None,
        }
    }

    pub fn density_g_per_l(&self) -> f64 {
        self.cysts_g / self.volume_l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub parameter: String,
    pub observed: f64,
    pub bound: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub pass: bool,
    pub density_g_per_l: f64,
    pub violations: Vec<Violation>,
}

pub fn validate_culture(spec: &CultureSpec, thr: &HatchThresholds) -> Result<PrepReport, ModelError> {
    if !(spec.volume_l.is_finite() && spec.volume_l > 0.0) {
        return Err(ModelError::InvalidSpec(format!("volume_l must be > 0, got {}", spec.volume_l)));
    }
    if !(spec.cysts_g.is_finite() && spec.cysts_g >= 0.0) {
        return Err(ModelError::InvalidSpec(format!("cysts_g must be >= 0, got {}", spec.cysts_g)));
    }
    if spec.seawater_parts == 0 || spec.tapwater_parts == 0 {
        return Err(ModelError::InvalidSpec("media parts must be positive".into()));
    }
    if !spec.salinity_ppt.is_finite() {
        return Err(ModelError::InvalidSpec("salinity_ppt must be finite".into()));
    }

    let mut violations = Vec::new();
    let sal = thr.salinity_ppt;
    if !sal.contains(spec.salinity_ppt) {
        violations.push(Violation {
            parameter: "salinity".into(),
            observed: spec.salinity_ppt,
            bound: format!("{}–{} ppt", sal.lo, sal.hi),
            message: format!("salinity {} outside {}–{} ppt", spec.salinity_ppt, sal.lo, sal.hi),
        });
    }
    let density = spec.density_g_per_l();
    if density > thr.max_density_g_per_l {
        violations.push(Violation {
            parameter: "density".into(),
            observed: density,
            bound: format!("<= {} g/L", thr.max_density_g_per_l),
            message: format!("density {} g/L exceeds {} g/L", density, thr.max_density_g_per_l),
        });
    }
    Ok(PrepReport { pass: violations.is_empty(), density_g_per_l: density, violations })
}
