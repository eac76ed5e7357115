//! Simulated sensor network and gateway for monitoring brine shrimp
//! (Artemia) hatching cultures.
//!
//! A seeded beaker model stands in for the culture, duty-cycled sensor
//! nodes sample it over a lossy radio link, and a gateway validates,
//! stores, alerts on and estimates hatching from what it hears. A gated
//! lifecycle walks a run from culture preparation to analysis.

pub mod config;
pub mod gateway;
pub mod model;
pub mod node;
pub mod parmi;
pub mod plant;
pub mod radio;
pub mod report;
pub mod rng;
pub mod runner;
pub mod sim;

pub use config::{Attestations, ConfigError, Mode, RunConfig};
pub use gateway::{Command, CommandStatus, Event, Gateway, HatchEstimate, IngestOutcome, RejectReason};
pub use model::{
    classify, default_thresholds, param_score, suitability, validate_culture, Band, Classification, CultureSpec,
    HatchThresholds, ModelError, Reading, SensorKind, Snapshot,
};
pub use node::{EnergyModel, Node, NodeConfig, RadioState};
pub use parmi::{AdvanceError, GateEvidence, Orchestrator, PhaseRecord, RunOutcome, RunPhase};
pub use plant::{PlantParams, PlantState, Preset};
pub use radio::{crc16, DecodeError, Frame, FrameType, LinkParams};
pub use report::Report;
pub use sim::{SimOptions, Simulation};
