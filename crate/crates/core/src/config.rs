//! Run configuration: one TOML file describes one reproducible run.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{default_thresholds, validate_culture, Band, CultureSpec, HatchThresholds, Range};
use crate::node::{NodeConfig, MAX_INTERVAL_S, MIN_INTERVAL_S};
use crate::parmi::DEFAULT_MAX_DURATION_S;
use crate::plant::{NoiseAmplitudes, PlantParams, PlantState, Preset};
use crate::radio::{LinkParams, BROADCAST_ADDR, GATEWAY_ADDR};

pub const DEFAULT_OUT_DIR: &str = "runs";
pub const DEFAULT_ACCEL: f64 = 60.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Batch,
    Live,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Batch => "batch",
            Mode::Live => "live",
        })
    }
}

/// Operator statements the simulator cannot observe. Batch runs take them
/// from here; live runs get them through the API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Attestations {
    pub culture_prepared: bool,
    pub aerator_on: bool,
}

impl Default for Attestations {
    fn default() -> Self {
        Attestations { culture_prepared: true, aerator_on: true }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdOverrides {
    pub temperature: Option<Band>,
    pub ph: Option<Band>,
    pub o2: Option<Band>,
    pub light: Option<Band>,
    pub humidity: Option<Band>,
    pub salinity_ppt: Option<Range>,
    pub max_density_g_per_l: Option<f64>,
    pub t_hatch_s: Option<f64>,
    pub feeding_window_s: Option<Range>,
}

impl ThresholdOverrides {
    pub fn apply(&self, base: HatchThresholds) -> HatchThresholds {
        HatchThresholds {
            temperature: self.temperature.unwrap_or(base.temperature),
            ph: self.ph.unwrap_or(base.ph),
            o2: self.o2.unwrap_or(base.o2),
            light: self.light.unwrap_or(base.light),
            humidity: self.humidity.or(base.humidity),
            salinity_ppt: self.salinity_ppt.unwrap_or(base.salinity_ppt),
            max_density_g_per_l: self.max_density_g_per_l.unwrap_or(base.max_density_g_per_l),
            t_hatch_s: self.t_hatch_s.unwrap_or(base.t_hatch_s),
            feeding_window_s: self.feeding_window_s.unwrap_or(base.feeding_window_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub preset: Preset,
    pub dt_s: Option<f64>,
    pub k_temp: Option<f64>,
    pub k_a: Option<f64>,
    pub c_sat: Option<f64>,
    pub k_c: Option<f64>,
    pub k_ph: Option<f64>,
    pub ph_mean: Option<f64>,
    pub k_humidity: Option<f64>,
    pub humidity_mean: Option<f64>,
    pub lamp_lux: Option<f64>,
    pub t_hatch_s: Option<f64>,
    pub noise: Option<NoiseAmplitudes>,
    pub aerator_fault_t: Option<f64>,
    pub initial_temp_c: Option<f64>,
    pub heater_setpoint_c: Option<f64>,
    pub initial_ph: Option<f64>,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            preset: Preset::Ideal,
            dt_s: None,
            k_temp: None,
            k_a: None,
            c_sat: None,
            k_c: None,
            k_ph: None,
            ph_mean: None,
            k_humidity: None,
            humidity_mean: None,
            lamp_lux: None,
            t_hatch_s: None,
            noise: None,
            aerator_fault_t: None,
            initial_temp_c: None,
            heater_setpoint_c: None,
            initial_ph: None,
        }
    }
}

impl PlantConfig {
    pub fn params(&self) -> PlantParams {
        let p = self.preset.params();
        PlantParams {
            dt_s: self.dt_s.unwrap_or(p.dt_s),
            k_temp: self.k_temp.unwrap_or(p.k_temp),
            k_a: self.k_a.unwrap_or(p.k_a),
            c_sat: self.c_sat.unwrap_or(p.c_sat),
            k_c: self.k_c.unwrap_or(p.k_c),
            k_ph: self.k_ph.unwrap_or(p.k_ph),
            ph_mean: self.ph_mean.unwrap_or(p.ph_mean),
            k_humidity: self.k_humidity.unwrap_or(p.k_humidity),
            humidity_mean: self.humidity_mean.unwrap_or(p.humidity_mean),
            lamp_lux: self.lamp_lux.unwrap_or(p.lamp_lux),
            t_hatch_s: self.t_hatch_s.unwrap_or(p.t_hatch_s),
            noise: self.noise.unwrap_or(p.noise),
            aerator_fault_t: self.aerator_fault_t.or(p.aerator_fault_t),
            hatch_response: p.hatch_response,
        }
    }

    pub fn initial_state(&self) -> PlantState {
        let params = self.params();
        let base = self.preset.initial_state();
        PlantState {
            temp_c: self.initial_temp_c.unwrap_or(base.temp_c),
            heater_setpoint_c: self.heater_setpoint_c.or(self.initial_temp_c).unwrap_or(base.heater_setpoint_c),
            ph: self.initial_ph.unwrap_or(if self.ph_mean.is_some() { params.ph_mean } else { base.ph }),
            o2_mg_l: if self.c_sat.is_some() { params.c_sat } else { base.o2_mg_l },
            light_lux: if base.lamp_on { params.lamp_lux } else { 0.0 },
            humidity_pct: if self.humidity_mean.is_some() { params.humidity_mean } else { base.humidity_pct },
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_accel")]
    pub accel: f64,
    #[serde(default = "default_max_duration")]
    pub max_duration_s: f64,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub serve: Option<String>,
    #[serde(default)]
    pub frames_log: bool,
    #[serde(default = "CultureSpec::bench_default")]
    pub culture: CultureSpec,
    #[serde(default)]
    pub attestations: Attestations,
    #[serde(default)]
    pub thresholds: ThresholdOverrides,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default = "default_nodes")]
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub link: LinkParams,
}

fn default_accel() -> f64 {
    DEFAULT_ACCEL
}

fn default_max_duration() -> f64 {
    DEFAULT_MAX_DURATION_S
}

fn default_nodes() -> Vec<NodeConfig> {
    vec![NodeConfig::all_kinds(1)]
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            mode: Mode::Batch,
            accel: DEFAULT_ACCEL,
            max_duration_s: DEFAULT_MAX_DURATION_S,
            out_dir: None,
            serve: None,
            frames_log: false,
            culture: CultureSpec::bench_default(),
            attestations: Attestations::default(),
            thresholds: ThresholdOverrides::default(),
            plant: PlantConfig::default(),
            nodes: default_nodes(),
            link: LinkParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

impl RunConfig {
    pub fn thresholds(&self) -> HatchThresholds {
        self.thresholds.apply(default_thresholds())
    }

    pub fn from_toml(text: &str, path: &str) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
            ConfigError::Parse { path: path.to_string(), line, column, message: e.message().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
        RunConfig::from_toml(&text, &shown)
    }

    /// Checks that the run can be set up at all. Culture limits are not
    /// checked here; they are the first lifecycle gate.
    pub fn structural_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.nodes.is_empty() {
            errs.push("at least one node is required".to_string());
        }
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            let id = format!("node {:#06x}", n.addr);
            if n.addr == GATEWAY_ADDR || n.addr == BROADCAST_ADDR {
                errs.push(format!("{id}: address is reserved"));
            }
            if !seen.insert(n.addr) {
                errs.push(format!("duplicate node address {:#06x}", n.addr));
            }
            if !(MIN_INTERVAL_S..=MAX_INTERVAL_S).contains(&n.sampling_interval_s) {
                errs.push(format!(
                    "{id}: sampling_interval_s {} outside {MIN_INTERVAL_S}–{MAX_INTERVAL_S}",
                    n.sampling_interval_s
                ));
            }
            if n.kinds.is_empty() {
                errs.push(format!("{id}: no sensors attached"));
            }
            for e in [n.energy.validate(), n.calibration.validate()] {
                if let Err(msg) = e {
                    errs.push(format!("{id}: {msg}"));
                }
            }
        }
        if let Err(e) = self.thresholds().validate() {
            errs.push(e.to_string());
        }
        if let Err(e) = self.plant.params().validate() {
            errs.push(e);
        }
        if let Err(e) = self.link.validate() {
            errs.push(e);
        }
        if !(self.accel.is_finite() && self.accel > 0.0) {
            errs.push("accel must be > 0".to_string());
        }
        if !(self.max_duration_s.is_finite() && self.max_duration_s > 0.0) {
            errs.push("max_duration_s must be > 0".to_string());
        }
        if let Err(e) = validate_culture(&self.culture, &self.thresholds()) {
            errs.push(e.to_string());
        }
        errs
    }

    /// Structural checks plus the culture limits.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = self.structural_errors();
        if let Ok(report) = validate_culture(&self.culture, &self.thresholds()) {
            errs.extend(report.violations.into_iter().map(|v| format!("culture: {}", v.message)));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}
