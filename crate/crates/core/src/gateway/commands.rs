//! Operator commands relayed to nodes and their acknowledgement lifecycle.
//!
//! A pending command is sent in each new contact window of its node (the
//! first frame heard after a quiet gap). If the node has still not
//! acknowledged it when a fourth window opens, the command times out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::{MAX_INTERVAL_S, MIN_INTERVAL_S};
use crate::radio::{Frame, ACK_ERROR, CMD_SET_INTERVAL, CMD_SLEEP, CMD_WAKE};

/// Frames closer together than this belong to the same contact window.
pub const WINDOW_GAP_S: f64 = 1.0;
pub const MAX_WINDOWS: u32 = 3;
pub const MAX_SLEEP_S: u32 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Command {
    SetInterval(u32),
    Sleep(u32),
    Wake,
}

impl Command {
    pub fn code(self) -> u8 {
        match self {
            Command::SetInterval(_) => CMD_SET_INTERVAL,
            Command::Sleep(_) => CMD_SLEEP,
            Command::Wake => CMD_WAKE,
        }
    }

    pub fn arg(self) -> i32 {
        match self {
            Command::SetInterval(s) | Command::Sleep(s) => s as i32,
            Command::Wake => 0,
        }
    }

    pub fn validate(self) -> Result<(), CommandError> {
        match self {
            Command::SetInterval(s) if !(MIN_INTERVAL_S..=MAX_INTERVAL_S).contains(&s) => Err(
                CommandError::InvalidArgument(format!("interval {s} s outside {MIN_INTERVAL_S}–{MAX_INTERVAL_S} s")),
            ),
            Command::Sleep(d) if d == 0 || d > MAX_SLEEP_S => {
                Err(CommandError::InvalidArgument(format!("sleep {d} s outside 1–{MAX_SLEEP_S} s")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum CommandError {
    #[error("node {0:#06x} is not registered")]
    NotFound(u16),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandStatus {
    Pending,
    Acked,
    /// The node answered but did not understand the command.
    Failed,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub id: u64,
    pub node: u16,
    pub command: Command,
    pub seq: u16,
    pub status: CommandStatus,
    pub issued_t: f64,
    pub windows_sent: u32,
    pub resolved_t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckMatch {
    Resolved(u64),
    /// Repeat ACK for a command that is already settled.
    Repeat(u64),
    Unmatched,
}

#[derive(Debug, Clone, Default)]
pub struct CommandTracker {
    records: BTreeMap<u64, CommandRecord>,
    next_id: u64,
    next_seq: BTreeMap<u16, u16>,
}

impl CommandTracker {
    pub fn new() -> CommandTracker {
        CommandTracker { next_id: 1, ..Default::default() }
    }

    pub fn get(&self, id: u64) -> Option<&CommandRecord> {
        self.records.get(&id)
    }

    pub fn all(&self) -> impl Iterator<Item = &CommandRecord> {
        self.records.values()
    }

    pub fn issue(&mut self, node: u16, command: Command, now: f64) -> CommandRecord {
        let id = self.next_id;
        self.next_id += 1;
        let counter = self.next_seq.entry(node).or_insert(1);
        let seq = *counter;
        *counter = counter.wrapping_add(1);
        let rec = CommandRecord {
            id,
            node,
            command,
            seq,
            status: CommandStatus::Pending,
            issued_t: now,
            windows_sent: 0,
            resolved_t: None,
        };
        self.records.insert(id, rec.clone());
        rec
    }

    /// A new contact window with `node` opened. Returns the frames to send
    /// and the records whose status changed.
    pub fn on_window(&mut self, node: u16, now: f64) -> (Vec<Frame>, Vec<CommandRecord>) {
        let mut frames = Vec::new();
        let mut changed = Vec::new();
        let ts = now as u32;
        for rec in self.records.values_mut() {
            if rec.node != node || rec.status != CommandStatus::Pending {
                continue;
            }
            if rec.windows_sent >= MAX_WINDOWS {
                rec.status = CommandStatus::TimedOut;
                rec.resolved_t = Some(now);
                changed.push(rec.clone());
                continue;
            }
            rec.windows_sent += 1;
            frames.push(Frame::command(node, rec.seq, rec.command.code(), ts, rec.command.arg()));
        }
        (frames, changed)
    }

    pub fn match_ack(&mut self, ack: &Frame, now: f64) -> (AckMatch, Option<CommandRecord>) {
        let hit = self.records.values_mut().rev().find(|r| r.node == ack.src && r.seq == ack.seq);
        let Some(rec) = hit else {
            return (AckMatch::Unmatched, None);
        };
        if rec.status != CommandStatus::Pending {
            return (AckMatch::Repeat(rec.id), None);
        }
        rec.status = if ack.payload == ACK_ERROR { CommandStatus::Failed } else { CommandStatus::Acked };
        rec.resolved_t = Some(now);
        (AckMatch::Resolved(rec.id), Some(rec.clone()))
    }
}
