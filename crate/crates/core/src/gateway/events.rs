//! Gateway event stream. Every state change the operator can see goes
//! through here, both to the run directory and to live subscribers.

use serde::{Deserialize, Serialize};

use super::alerts::AlertTransition;
use super::commands::CommandRecord;
use super::directory::NodeDirectoryEntry;
use super::estimator::HatchEstimate;
use crate::model::Reading;
use crate::parmi::PhaseRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "lowercase")]
pub enum Event {
    Reading(Reading),
    Alert(AlertTransition),
    Phase(PhaseRecord),
    Node(NodeDirectoryEntry),
    Hatch(HatchEstimate),
    Command(CommandRecord),
}

impl Event {
    pub fn tag(&self) -> &'static str {
        match self {
            Event::Reading(_) => "reading",
            Event::Alert(_) => "alert",
            Event::Phase(_) => "phase",
            Event::Node(_) => "node",
            Event::Hatch(_) => "hatch",
            Event::Command(_) => "command",
        }
    }
}
