//! Braking commands and the actuation backend.
//!
//! PWM duty equals the triggering collision score. A brake-light emergency
//! always drives duty 1.0. The simulated backend writes one log line per
//! command: `ts_ms,duty_pct,freq_hz,cause,emergency`, e.g.
//! `4200,75.0,100,track:3,0` or `4300,100.0,100,EMERGENCY,1`.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;
use tracing::warn;

use crate::risk::RiskOutput;

pub const DEFAULT_FREQUENCY_HZ: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrakeCause {
    Score { track_id: u64 },
    BrakeLightEmergency,
}

impl fmt::Display for BrakeCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BrakeCause::Score { track_id } => write!(f, "track:{track_id}"),
            BrakeCause::BrakeLightEmergency => f.write_str("EMERGENCY"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrakeCommand {
    pub duty: f64,
    pub frequency_hz: f64,
    pub cause: BrakeCause,
    pub timestamp_ms: u64,
}

impl BrakeCommand {
    pub fn is_emergency(&self) -> bool {
        self.cause == BrakeCause::BrakeLightEmergency
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarningEvent {
    pub track_id: u64,
    pub score: f64,
    pub message: String,
    pub timestamp_ms: u64,
}

/// Emergency wins; otherwise the highest alerted score drives the brake.
pub fn to_command(output: &RiskOutput, frequency_hz: f64, timestamp_ms: u64) -> Option<BrakeCommand> {
    if output.emergency.is_some() {
        return Some(BrakeCommand {
            duty: 1.0,
            frequency_hz,
            cause: BrakeCause::BrakeLightEmergency,
            timestamp_ms,
        });
    }
    output
        .assessments
        .iter()
        .filter(|a| a.alert)
        .max_by(|a, b| a.score.total_cmp(&b.score).then(b.track_id.cmp(&a.track_id)))
        .map(|a| BrakeCommand {
            duty: a.score.clamp(0.0, 1.0),
            frequency_hz,
            cause: BrakeCause::Score { track_id: a.track_id },
            timestamp_ms,
        })
}

/// Driver warnings for every alerted assessment.
pub fn warnings(output: &RiskOutput) -> Vec<WarningEvent> {
    output
        .assessments
        .iter()
        .filter(|a| a.alert)
        .map(|a| WarningEvent {
            track_id: a.track_id,
            score: a.score,
            message: format!(
                "collision warning: object {} risk {:.0}%",
                a.track_id,
                a.score * 100.0
            ),
            timestamp_ms: a.timestamp_ms,
        })
        .collect()
}

/// One line of the actuation log.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuationRecord {
    pub timestamp_ms: u64,
    pub duty_pct: f64,
    pub frequency_hz: f64,
    pub cause: BrakeCause,
    pub emergency: bool,
}

impl From<&BrakeCommand> for ActuationRecord {
    fn from(cmd: &BrakeCommand) -> Self {
        Self {
            timestamp_ms: cmd.timestamp_ms,
            duty_pct: cmd.duty * 100.0,
            frequency_hz: cmd.frequency_hz,
            cause: cmd.cause,
            emergency: cmd.is_emergency(),
        }
    }
}

impl fmt::Display for ActuationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{:.1},{},{},{}",
            self.timestamp_ms,
            self.duty_pct,
            self.frequency_hz,
            self.cause,
            u8::from(self.emergency)
        )
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("bad actuation record `{line}`: {reason}")]
pub struct RecordParseError {
    pub line: String,
    pub reason: &'static str,
}

impl FromStr for ActuationRecord {
    type Err = RecordParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let err = |reason| RecordParseError {
            line: line.to_owned(),
            reason,
        };
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        let [ts, duty, freq, cause, emergency] = fields[..] else {
            return Err(err("expected 5 comma-separated fields"));
        };
        let cause = match cause {
            "EMERGENCY" => BrakeCause::BrakeLightEmergency,
            other => BrakeCause::Score {
                track_id: other
                    .strip_prefix("track:")
                    .and_then(|id| id.parse().ok())
                    .ok_or_else(|| err("cause must be EMERGENCY or track:<id>"))?,
            },
        };
        Ok(Self {
            timestamp_ms: ts.parse().map_err(|_| err("bad timestamp"))?,
            duty_pct: duty.parse().map_err(|_| err("bad duty"))?,
            frequency_hz: freq.parse().map_err(|_| err("bad frequency"))?,
            cause,
            emergency: match emergency {
                "0" => false,
                "1" => true,
                _ => return Err(err("emergency flag must be 0 or 1")),
            },
        })
    }
}

/// Parses a whole actuation log, skipping blank lines.
pub fn parse_actuation_log(text: &str) -> Result<Vec<ActuationRecord>, RecordParseError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Error)]
pub enum ActuationError {
    #[error("actuation backend write failed: {0}")]
    Io(#[from] io::Error),
    #[error("invalid command: duty {0} outside [0, 1]")]
    InvalidDuty(f64),
    #[error("backend call took {elapsed:?}, budget {budget:?}")]
    Timeout { elapsed: Duration, budget: Duration },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acknowledgment {
    pub sequence: u64,
    pub record: ActuationRecord,
}

/// Swappable braking output; the simulated backends log, hardware drivers would drive PWM.
pub trait ActuatorBackend: Send {
    fn apply(&mut self, record: &ActuationRecord) -> Result<(), ActuationError>;

    fn flush(&mut self) -> Result<(), ActuationError> {
        Ok(())
    }
}

/// Writes the actuation log to any `Write` sink.
#[derive(Debug)]
pub struct LogBackend<W: Write + Send> {
    out: W,
}

impl<W: Write + Send> LogBackend<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    pub fn get_ref(&self) -> &W {
        &self.out
    }
}

impl<W: Write + Send> ActuatorBackend for LogBackend<W> {
    fn apply(&mut self, record: &ActuationRecord) -> Result<(), ActuationError> {
        writeln!(self.out, "{record}")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), ActuationError> {
        self.out.flush()?;
        Ok(())
    }
}

/// In-memory log, shared so the caller can read it while the pipeline owns the backend.
#[derive(Debug, Clone, Default)]
pub struct MemoryBackend {
    buf: std::sync::Arc<std::sync::Mutex<Vec<u8>>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> Vec<u8> {
        self.buf.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.contents()).into_owned()
    }
}

impl ActuatorBackend for MemoryBackend {
    fn apply(&mut self, record: &ActuationRecord) -> Result<(), ActuationError> {
        let mut buf = self.buf.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(buf, "{record}")?;
        Ok(())
    }
}

/// Log file opened on first use, so an unwritable path surfaces per command
/// instead of aborting the pipeline.
#[derive(Debug)]
pub struct FileBackend {
    path: PathBuf,
    file: Option<BufWriter<File>>,
}

impl FileBackend {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            file: None,
        }
    }

    fn writer(&mut self) -> io::Result<&mut BufWriter<File>> {
        if self.file.is_none() {
            self.file = Some(BufWriter::new(File::create(&self.path)?));
        }
        Ok(self.file.as_mut().expect("just opened"))
    }

    /// Creates (truncates) the file even when no command is ever issued.
    pub fn create(path: impl Into<PathBuf>) -> io::Result<Self> {
        let mut backend = Self::new(path);
        backend.writer()?;
        Ok(backend)
    }
}

impl ActuatorBackend for FileBackend {
    fn apply(&mut self, record: &ActuationRecord) -> Result<(), ActuationError> {
        writeln!(self.writer()?, "{record}")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), ActuationError> {
        if let Some(f) = self.file.as_mut() {
            f.flush()?;
        }
        Ok(())
    }
}

/// Backend that discards everything; used when no log is configured.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullBackend;

impl ActuatorBackend for NullBackend {
    fn apply(&mut self, _: &ActuationRecord) -> Result<(), ActuationError> {
        Ok(())
    }
}

/// Validates and sends one command through `backend`.
pub fn emit(
    cmd: &BrakeCommand,
    backend: &mut dyn ActuatorBackend,
    sequence: u64,
) -> Result<Acknowledgment, ActuationError> {
    if !(0.0..=1.0).contains(&cmd.duty) {
        return Err(ActuationError::InvalidDuty(cmd.duty));
    }
    let record = ActuationRecord::from(cmd);
    backend.apply(&record)?;
    Ok(Acknowledgment { sequence, record })
}

/// Owns the backend and isolates its faults from the pipeline.
pub struct Actuator {
    backend: Box<dyn ActuatorBackend>,
    budget: Duration,
    sequence: u64,
    failures: u64,
}

impl fmt::Debug for Actuator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Actuator")
            .field("budget", &self.budget)
            .field("sequence", &self.sequence)
            .field("failures", &self.failures)
            .finish_non_exhaustive()
    }
}

impl Actuator {
    pub fn new(backend: Box<dyn ActuatorBackend>, budget: Duration) -> Self {
        Self {
            backend,
            budget,
            sequence: 0,
            failures: 0,
        }
    }

    /// Emits the command. Errors are logged, counted and returned; the caller
    /// keeps running either way.
    pub fn dispatch(&mut self, cmd: &BrakeCommand) -> Result<Acknowledgment, ActuationError> {
        let started = Instant::now();
        let result = emit(cmd, self.backend.as_mut(), self.sequence);
        let elapsed = started.elapsed();
        self.sequence += 1;
        let result = match result {
            Ok(_) if elapsed > self.budget => Err(ActuationError::Timeout {
                elapsed,
                budget: self.budget,
            }),
            other => other,
        };
        if let Err(e) = &result {
            self.failures += 1;
            warn!(ts = cmd.timestamp_ms, "actuation error: {e}");
        }
        result
    }

    pub fn failures(&self) -> u64 {
        self.failures
    }

    pub fn flush(&mut self) -> Result<(), ActuationError> {
        self.backend.flush()
    }
}
