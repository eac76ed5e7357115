//! Run directory: write-through NDJSON logs and the readers replay uses.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::events::Event;
use crate::config::RunConfig;
use crate::model::HatchThresholds;
use crate::radio::hex_dump_line;

pub const MANIFEST: &str = "manifest.json";
pub const READINGS: &str = "readings.ndjson";
pub const ALERTS: &str = "alerts.ndjson";
pub const PHASES: &str = "phases.ndjson";
pub const COMMANDS: &str = "commands.ndjson";
pub const FRAMES: &str = "frames.log";
pub const REPORT: &str = "report.json";

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{}: file is missing", path.display())]
    Missing { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Corrupt { path: PathBuf, line: usize, message: String },
}

impl PersistError {
    pub fn io(path: &Path, source: io::Error) -> PersistError {
        if source.kind() == io::ErrorKind::NotFound {
            PersistError::Missing { path: path.to_path_buf() }
        } else {
            PersistError::Io { path: path.to_path_buf(), source }
        }
    }

    pub fn path(&self) -> &Path {
        match self {
            PersistError::Missing { path } | PersistError::Io { path, .. } | PersistError::Corrupt { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub mode: String,
    /// Sim seconds per wall second in live mode.
    pub accel: Option<f64>,
    /// Wall-clock instant of sim t = 0, RFC 3339.
    pub epoch_wall: String,
    pub thresholds: HatchThresholds,
    pub config: RunConfig,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest, PersistError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| PersistError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| PersistError::Corrupt { path, line: e.line(), message: e.to_string() })
    }
}

struct Log {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Log {
    fn create(path: PathBuf) -> Result<Log, PersistError> {
        let file = File::create(&path).map_err(|e| PersistError::io(&path, e))?;
        Ok(Log { path, out: BufWriter::new(file) })
    }

    fn line<T: Serialize>(&mut self, value: &T) -> Result<(), PersistError> {
        let mut buf = serde_json::to_vec(value).expect("records always serialize");
        buf.push(b'\n');
        self.out.write_all(&buf).map_err(|e| PersistError::io(&self.path, e))
    }

    fn raw(&mut self, text: &str) -> Result<(), PersistError> {
        writeln!(self.out, "{text}").map_err(|e| PersistError::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<(), PersistError> {
        self.out.flush().map_err(|e| PersistError::io(&self.path, e))
    }
}

pub struct RunWriter {
    dir: PathBuf,
    readings: Log,
    alerts: Log,
    phases: Log,
    commands: Log,
    frames: Option<Log>,
}

impl RunWriter {
    /// Creates the directory (if needed), writes the manifest and truncates
    /// every log.
    pub fn create(dir: &Path, manifest: &Manifest, frames_log: bool) -> Result<RunWriter, PersistError> {
        fs::create_dir_all(dir).map_err(|e| PersistError::io(dir, e))?;
        write_json_pretty(&dir.join(MANIFEST), manifest)?;
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            readings: Log::create(dir.join(READINGS))?,
            alerts: Log::create(dir.join(ALERTS))?,
            phases: Log::create(dir.join(PHASES))?,
            commands: Log::create(dir.join(COMMANDS))?,
            frames: if frames_log { Some(Log::create(dir.join(FRAMES))?) } else { None },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends the event to its log. Node and hatch events are live-only.
    pub fn write_event(&mut self, event: &Event) -> Result<(), PersistError> {
        match event {
            Event::Reading(r) => self.readings.line(r),
            Event::Alert(a) => self.alerts.line(a),
            Event::Phase(p) => self.phases.line(p),
            Event::Command(c) => self.commands.line(c),
            Event::Node(_) | Event::Hatch(_) => Ok(()),
        }
    }

    pub fn write_frame(&mut self, t_s: f64, uplink: bool, bytes: &[u8]) -> Result<(), PersistError> {
        match self.frames.as_mut() {
            Some(log) => log.raw(&hex_dump_line(t_s, uplink, bytes)),
            None => Ok(()),
        }
    }

    pub fn flush(&mut self) -> Result<(), PersistError> {
        self.readings.flush()?;
        self.alerts.flush()?;
        self.phases.flush()?;
        self.commands.flush()?;
        if let Some(f) = self.frames.as_mut() {
            f.flush()?;
        }
        Ok(())
    }
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), PersistError> {
    let mut text = serde_json::to_string_pretty(value).expect("records always serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| PersistError::io(path, e))
}

/// Feeds each record of an NDJSON file to `f` in order. On a bad line the
/// error names it, and everything before it has already been delivered.
pub fn for_each_line<T, F>(path: &Path, mut f: F) -> Result<usize, PersistError>
where
    T: DeserializeOwned,
    F: FnMut(T),
{
    let file = File::open(path).map_err(|e| PersistError::io(path, e))?;
    let mut count = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PersistError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| PersistError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        f(record);
        count += 1;
    }
    Ok(count)
}

pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PersistError> {
    let mut out = Vec::new();
    for_each_line(path, |r| out.push(r))?;
    Ok(out)
}
