//! Ground-truth beaker simulator.
//!
//! Explicit Euler at a fixed step. Temperature relaxes to the heater
//! setpoint, dissolved oxygen relaxes to saturation while the aerator runs
//! and is consumed by hatched nauplii, pH and humidity revert to their
//! means, light follows the lamp. Hatch progress integrates the
//! suitability of the current conditions over the nominal incubation time.
//! The linear-in-suitability hatch law is a model choice; it has no lag
//! phase and can be swapped without touching the rest of the simulator.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::model::{default_thresholds, suitability, HatchThresholds, SensorKind, Snapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Sim seconds.
    pub t: f64,
    pub temp_c: f64,
    pub ph: f64,
    pub o2_mg_l: f64,
    pub light_lux: f64,
    pub humidity_pct: f64,
    /// Accumulated suitability-weighted seconds.
    pub hatch_s: f64,
    pub hatch_fraction: f64,
    pub aerator_on: bool,
    pub lamp_on: bool,
    pub heater_setpoint_c: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseAmplitudes {
    pub temp: f64,
    pub ph: f64,
    pub o2: f64,
    pub humidity: f64,
    pub light: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    pub dt_s: f64,
    pub k_temp: f64,
    /// Aeration transfer rate, 1/s.
    pub k_a: f64,
    pub c_sat: f64,
    /// O2 consumption in mg/L/s when fully hatched.
    pub k_c: f64,
    pub k_ph: f64,
    pub ph_mean: f64,
    pub k_humidity: f64,
    pub humidity_mean: f64,
    pub lamp_lux: f64,
    pub noise: NoiseAmplitudes,
    pub t_hatch_s: f64,
    /// Aerator silently stops working from this sim time on.
    pub aerator_fault_t: Option<f64>,
    /// Bands that govern the biological response (hatch rate).
    pub hatch_response: HatchThresholds,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            dt_s: 1.0,
            k_temp: 1.0 / 600.0,
            k_a: 1.0 / 300.0,
            c_sat: 7.2,
            k_c: 2e-4,
            k_ph: 1.0 / 1800.0,
            ph_mean: 8.0,
            k_humidity: 1.0 / 900.0,
            humidity_mean: 60.0,
            lamp_lux: 5000.0,
            noise: NoiseAmplitudes::default(),
            t_hatch_s: 86_400.0,
            aerator_fault_t: None,
            hatch_response: default_thresholds(),
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt_s.is_finite() && self.dt_s > 0.0) {
            return Err("plant dt_s must be > 0".into());
        }
        if !(self.t_hatch_s.is_finite() && self.t_hatch_s > 0.0) {
            return Err("plant t_hatch_s must be > 0".into());
        }
        let rates = [
            self.k_temp,
            self.k_a,
            self.k_c,
            self.k_ph,
            self.k_humidity,
            self.noise.temp,
            self.noise.ph,
            self.noise.o2,
            self.noise.humidity,
            self.noise.light,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err("plant rates and noise amplitudes must be finite and >= 0".into());
        }
        Ok(())
    }

    fn aerator_effective(&self, state: &PlantState) -> bool {
        state.aerator_on && self.aerator_fault_t.is_none_or(|tf| state.t < tf)
    }
}

impl PlantState {
    pub fn observables(&self) -> Snapshot {
        let mut s = Snapshot::default();
        for kind in SensorKind::ALL {
            s.set(kind, observe(self, kind));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Ideal,
    Noisy,
    ColdRoom,
    AeratorFailure,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Ideal, Preset::Noisy, Preset::ColdRoom, Preset::AeratorFailure];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Ideal => "ideal",
            Preset::Noisy => "noisy",
            Preset::ColdRoom => "cold-room",
            Preset::AeratorFailure => "aerator-failure",
        }
    }

    pub fn params(self) -> PlantParams {
        let base = PlantParams::default();
        match self {
            Preset::Ideal | Preset::ColdRoom => base,
            Preset::Noisy => PlantParams {
                noise: NoiseAmplitudes { temp: 0.01, ph: 0.002, o2: 0.005, humidity: 0.1, light: 50.0 },
                ..base
            },
            Preset::AeratorFailure => PlantParams { aerator_fault_t: Some(8.0 * 3600.0), ..base },
        }
    }

    /// Starting beaker state. Actuators other than the lamp start off; the
    /// run lifecycle switches the aerator on.
    pub fn initial_state(self) -> PlantState {
        let p = self.params();
        let temp = match self {
            Preset::ColdRoom => 21.0,
            _ => 25.0,
        };
        PlantState {
            t: 0.0,
            temp_c: temp,
            ph: p.ph_mean,
            o2_mg_l: p.c_sat,
            light_lux: p.lamp_lux,
            humidity_pct: p.humidity_mean,
            hatch_s: 0.0,
            hatch_fraction: 0.0,
            aerator_on: false,
            lamp_on: true,
            heater_setpoint_c: temp,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown plant preset '{s}' (expected ideal, noisy, cold-room or aerator-failure)"))
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, amplitude: f64) -> f64 {
    if amplitude == 0.0 {
        0.0
    } else {
        let z: f64 = rng.sample(StandardNormal);
        amplitude * z
    }
}

pub fn step<R: Rng + ?Sized>(state: &PlantState, params: &PlantParams, rng: &mut R) -> PlantState {
    let dt = params.dt_s;
    let n = &params.noise;
    // Hatch rate uses the conditions at the start of the step.
    let s = suitability(&state.observables(), &params.hatch_response).unwrap_or(0.0);

    let temp_c = state.temp_c + params.k_temp * (state.heater_setpoint_c - state.temp_c) * dt + gauss(rng, n.temp);

    let aeration = if params.aerator_effective(state) { 1.0 } else { 0.0 };
    let do2 = params.k_a * (params.c_sat - state.o2_mg_l) * aeration - params.k_c * state.hatch_fraction;
    let o2_mg_l = (state.o2_mg_l + do2 * dt + gauss(rng, n.o2)).max(0.0);

    let ph = (state.ph + params.k_ph * (params.ph_mean - state.ph) * dt + gauss(rng, n.ph)).clamp(0.0, 14.0);
    let humidity_pct = (state.humidity_pct
        + params.k_humidity * (params.humidity_mean - state.humidity_pct) * dt
        + gauss(rng, n.humidity))
    .clamp(0.0, 100.0);

    let lamp = if state.lamp_on { params.lamp_lux } else { 0.0 };
    let light_lux = (lamp + gauss(rng, n.light)).max(0.0);

    let hatch_s = state.hatch_s + s * dt;
    let hatch_fraction = (hatch_s / params.t_hatch_s).min(1.0).max(state.hatch_fraction);

    PlantState {
        t: state.t + dt,
        temp_c,
        ph,
        o2_mg_l,
        light_lux,
        humidity_pct,
        hatch_s,
        hatch_fraction,
        ..state.clone()
    }
}

pub fn observe(state: &PlantState, kind: SensorKind) -> f64 {
    match kind {
        SensorKind::TemperatureC => state.temp_c,
        SensorKind::Ph => state.ph,
        SensorKind::DissolvedO2MgPerL => state.o2_mg_l,
        SensorKind::HumidityPct => state.humidity_pct,
        SensorKind::LightLux => state.light_lux,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "actuator", content = "value", rename_all = "snake_case")]
pub enum Actuator {
    Aerator(bool),
    Lamp(bool),
    HeaterSetpoint(f64),
}

pub fn set_actuator(state: &PlantState, actuator: Actuator) -> PlantState {
    let mut next = state.clone();
    match actuator {
        Actuator::Aerator(on) => next.aerator_on = on,
        Actuator::Lamp(on) => {
            next.lamp_on = on;
        }
        Actuator::HeaterSetpoint(c) => next.heater_setpoint_c = c,
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn ideal_running() -> (PlantState, PlantParams) {
        let state = set_actuator(&Preset::Ideal.initial_state(), Actuator::Aerator(true));
        (state, Preset::Ideal.params())
    }

    #[test]
    fn ideal_day_hatches_exactly() {
        let (mut s, p) = ideal_running();
        let mut rng = stream(1, 0);
        for _ in 0..86_400 {
            s = step(&s, &p, &mut rng);
        }
        assert_eq!(s.hatch_fraction, 1.0);
        assert_eq!(s.t, 86_400.0);
    }

    #[test]
    fn zero_suitability_freezes_hatch() {
        let (s, p) = ideal_running();
        let mut s = set_actuator(&s, Actuator::Lamp(false));
        s.light_lux = 0.0;
        s.hatch_s = 1000.0;
        s.hatch_fraction = 1000.0 / 86_400.0;
        let h0 = s.hatch_fraction;
        let mut rng = stream(1, 0);
        for _ in 0..5000 {
            s = step(&s, &p, &mut rng);
        }
        assert_eq!(s.hatch_fraction, h0);
    }

    #[test]
    fn saturated_oxygen_is_a_fixed_point() {
        let (s, p) = ideal_running();
        let next = step(&s, &p, &mut stream(1, 0));
        assert_eq!(next.o2_mg_l, p.c_sat);
    }

    #[test]
    fn aeration_matches_closed_form() {
        let (mut s, p) = ideal_running();
        s.o2_mg_l = 3.0;
        let steps = (3.0 / p.k_a / p.dt_s).round() as usize;
        let mut rng = stream(1, 0);
        // hold H at zero so consumption does not enter
        for _ in 0..steps {
            s = step(&s, &p, &mut rng);
            s.hatch_s = 0.0;
            s.hatch_fraction = 0.0;
        }
        let t = steps as f64 * p.dt_s;
        let exact = p.c_sat + (3.0 - p.c_sat) * (-p.k_a * t).exp();
        assert!(((s.o2_mg_l - exact) / exact).abs() < 0.01, "{} vs {}", s.o2_mg_l, exact);
    }

    #[test]
    fn heater_setpoint_converges() {
        let (s, p) = ideal_running();
        let mut s = set_actuator(&s, Actuator::HeaterSetpoint(25.0));
        s.temp_c = 18.0;
        // |error| decays as (1 - k dt)^n; 7 * e^(-n/600) < 0.01 needs n > 3931
        let mut rng = stream(1, 0);
        for _ in 0..6000 {
            s = step(&s, &p, &mut rng);
        }
        assert!((s.temp_c - 25.0).abs() < 0.01);
    }

    #[test]
    fn observe_projects_and_is_pure() {
        let (mut s, _) = ideal_running();
        s.temp_c = 25.0;
        assert_eq!(observe(&s, SensorKind::TemperatureC), 25.0);
        assert_eq!(observe(&s, SensorKind::TemperatureC), observe(&s, SensorKind::TemperatureC));
        let mut dark = set_actuator(&s, Actuator::Lamp(false));
        dark = step(&dark, &Preset::Ideal.params(), &mut stream(1, 0));
        assert_eq!(observe(&dark, SensorKind::LightLux), 0.0);
    }

    #[test]
    fn set_actuator_touches_one_field_and_is_idempotent() {
        let s = Preset::Ideal.initial_state();
        let on = set_actuator(&s, Actuator::Aerator(true));
        assert!(on.aerator_on);
        assert_eq!(PlantState { aerator_on: false, ..on.clone() }, s);
        assert_eq!(set_actuator(&on, Actuator::Aerator(true)), on);
        let warm = set_actuator(&s, Actuator::HeaterSetpoint(26.0));
        assert_eq!(set_actuator(&warm, Actuator::HeaterSetpoint(26.0)), warm);
    }

    #[test]
    fn oxygen_never_negative_under_heavy_consumption() {
        let p = PlantParams {
            k_c: 5.0,
            noise: NoiseAmplitudes { o2: 0.5, ..Default::default() },
            ..PlantParams::default()
        };
        let mut s = Preset::Ideal.initial_state();
        s.hatch_fraction = 1.0;
        s.hatch_s = 86_400.0;
        let mut rng = stream(9, 0);
        for _ in 0..1000 {
            s = step(&s, &p, &mut rng);
            assert!(s.o2_mg_l >= 0.0);
        }
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            p.params().validate().unwrap();
        }
        assert!("tropical".parse::<Preset>().is_err());
    }
}
