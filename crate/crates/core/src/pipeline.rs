//! End-to-end composition: fusion, tracking, kinematics, risk and actuation.
//!
//! Packets from all cameras are replayed in timestamp order. Each camera feeds
//! a latest-wins buffer; a composite tick fires once every buffer holds a packet
//! not yet consumed. Ticks whose camera skew exceeds the tolerance are skipped
//! and counted. With `frame_stride = k` only every k-th tick reaches the tracker.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;
use tracing::{debug, trace, warn};

use crate::actuator::{
    to_command, ActuationRecord, Actuator, ActuatorBackend, BrakeCause, BrakeCommand, FileBackend, NullBackend,
};
use crate::config::{ConfigError, PipelineConfig};
use crate::detection::{read_stream, ClassKind, FramePacket, LabelRegistry, StreamError};
use crate::fusion::{CompositePacket, FusedDetection, FusionError, StreamFusion, StreamHandle};
use crate::kinematics::{update_track_speed, KinematicsConfig};
use crate::risk::{BrakeObservation, RiskEngine};
use crate::tracking::{FrameStamp, Tracker};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("fusion failed at t={timestamp_ms} ms: {source}")]
    Fusion {
        timestamp_ms: u64,
        #[source]
        source: FusionError,
    },
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Stream {
        path: PathBuf,
        #[source]
        source: StreamError,
    },
}

/// Per-tick record of what the risk stage saw.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub tracks: usize,
    /// `(track_id, score)` for every assessed track.
    pub scores: Vec<(u64, f64)>,
    pub alert: bool,
    pub emergency: bool,
    /// Duty of the command issued on this tick, if any.
    pub duty: Option<f64>,
}

impl TraceRow {
    pub fn max_score(&self) -> Option<f64> {
        self.scores.iter().map(|s| s.1).max_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub packets: u64,
    pub ticks: u64,
    pub processed: u64,
    pub skipped_stride: u64,
    pub skipped_alignment: u64,
    pub skipped_stale: u64,
    pub commands: u64,
    pub emergencies: u64,
    pub actuation_failures: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub commands: Vec<BrakeCommand>,
    pub trace: Vec<TraceRow>,
    pub stats: RunStats,
}

impl RunOutput {
    pub fn log_records(&self) -> Vec<ActuationRecord> {
        self.commands.iter().map(ActuationRecord::from).collect()
    }

    /// The actuation log exactly as the file backend writes it.
    pub fn log_text(&self) -> String {
        self.commands
            .iter()
            .map(|c| format!("{}\n", ActuationRecord::from(c)))
            .collect()
    }

    /// Frame of the first tick that issued a braking command.
    pub fn first_command_frame(&self) -> Option<u64> {
        self.trace.iter().find(|r| r.duty.is_some()).map(|r| r.frame_index)
    }

    pub fn has_emergency(&self) -> bool {
        self.commands.iter().any(|c| c.cause == BrakeCause::BrakeLightEmergency)
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    labels: LabelRegistry,
    fusion: StreamFusion,
    handles: BTreeMap<u32, StreamHandle>,
    kinematics: BTreeMap<u32, KinematicsConfig>,
    tracker: Tracker,
    risk: RiskEngine,
    actuator: Actuator,
    last_frame: Option<u64>,
    out: RunOutput,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("cameras", &self.handles.keys().collect::<Vec<_>>())
            .field("stats", &self.out.stats)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    /// Builds a pipeline whose actuator writes to `config.actuation_log` if set.
    pub fn new(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let backend: Box<dyn ActuatorBackend> = match &config.actuation_log {
            Some(path) => Box::new(FileBackend::new(path)),
            None => Box::new(NullBackend),
        };
        Self::with_backend(config, backend)
    }

    pub fn with_backend(config: &PipelineConfig, backend: Box<dyn ActuatorBackend>) -> Result<Self, PipelineError> {
        config.validate()?;
        let labels = config.labels().expect("validated");
        let layout = config.layout().expect("validated");
        let mut fusion = StreamFusion::new();
        let mut handles = BTreeMap::new();
        let mut kinematics = BTreeMap::new();
        for cam in &config.cameras {
            let handle = fusion
                .register_stream(cam.clone())
                .map_err(|e| ConfigError::Invalid {
                    field: "cameras".into(),
                    reason: e.to_string(),
                })?;
            handles.insert(cam.camera_id, handle);
            kinematics.insert(cam.camera_id, config.kinematics_for(cam.ppm));
        }
        let risk = RiskEngine::new(
            config.risk_weights(),
            config.grid(&layout),
            config.beta,
            layout.composite_height() as f64,
        );
        Ok(Self {
            labels,
            fusion,
            handles,
            kinematics,
            tracker: Tracker::new(config.tracker_config()),
            risk,
            actuator: Actuator::new(backend, config.backend_budget()),
            last_frame: None,
            out: RunOutput::default(),
            config: config.clone(),
        })
    }

    pub fn labels(&self) -> &LabelRegistry {
        &self.labels
    }

    pub fn stats(&self) -> RunStats {
        self.out.stats
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    /// Feeds one packet; runs a composite tick when every camera is fresh.
    pub fn push(&mut self, packet: FramePacket) -> Result<(), PipelineError> {
        let ts = packet.timestamp_ms;
        let handle = self.handles.get(&packet.camera_id).ok_or(PipelineError::Fusion {
            timestamp_ms: ts,
            source: FusionError::UnknownCamera(packet.camera_id),
        })?;
        handle
            .publish(packet)
            .map_err(|source| PipelineError::Fusion { timestamp_ms: ts, source })?;
        self.out.stats.packets += 1;
        if !self.fusion.all_fresh() {
            return Ok(());
        }
        match self.fusion.tick(self.config.tolerance_ms) {
            Ok(Some(composite)) => {
                self.out.stats.ticks += 1;
                self.on_tick(composite);
                Ok(())
            }
            Ok(None) => Ok(()),
            Err(FusionError::Alignment {
                skew_ms,
                lagging_camera,
                ..
            }) => {
                self.out.stats.ticks += 1;
                self.out.stats.skipped_alignment += 1;
                warn!(ts, skew_ms, lagging_camera, "skipping misaligned tick");
                Ok(())
            }
            Err(source) => Err(PipelineError::Fusion { timestamp_ms: ts, source }),
        }
    }

    fn on_tick(&mut self, composite: CompositePacket) {
        let stride = self.config.frame_stride.max(1) as u64;
        if !(self.out.stats.ticks - 1).is_multiple_of(stride) {
            self.out.stats.skipped_stride += 1;
            return;
        }
        let ts = composite.timestamp_ms;
        let frame_index = (ts as f64 * self.config.fps / 1000.0).round() as u64;
        if self.last_frame.is_some_and(|last| frame_index <= last) {
            self.out.stats.skipped_stale += 1;
            debug!(ts, frame_index, "tick does not advance the frame index");
            return;
        }
        let dt_frames = match self.last_frame {
            Some(last) => (((frame_index - last) as f64 / stride as f64).round() as u32).max(1),
            None => 1,
        };
        self.last_frame = Some(frame_index);
        self.out.stats.processed += 1;

        let min_conf = self.config.min_confidence;
        let mut tracked: Vec<FusedDetection> = Vec::with_capacity(composite.detections.len());
        let mut brakes = Vec::new();
        for det in composite.detections {
            if det.detection.confidence < min_conf {
                continue;
            }
            match self.labels.kind(det.detection.class_id) {
                Some(ClassKind::BrakeOn) | Some(ClassKind::BrakeOff) => brakes.push(BrakeObservation {
                    bbox: det.detection.bbox,
                    camera_id: det.camera_id,
                    on: self.labels.kind(det.detection.class_id) == Some(ClassKind::BrakeOn),
                }),
                Some(kind) if kind.is_tracked() => tracked.push(det),
                _ => {}
            }
        }

        let stamp = FrameStamp {
            frame_index,
            timestamp_ms: ts,
            dt_frames,
        };
        self.tracker.step(&tracked, stamp);
        for track in self.tracker.tracks_mut() {
            let Some(kin) = self.kinematics.get(&track.camera_id) else {
                continue;
            };
            if let Err(e) = update_track_speed(track, kin) {
                trace!(track = track.track_id, "speed not updated: {e}");
            }
        }
        let output = self.risk.assess(self.tracker.tracks(), &brakes, ts);
        let command = to_command(&output, self.config.frequency_hz, ts);
        if let Some(cmd) = &command {
            if self.actuator.dispatch(cmd).is_err() {
                self.out.stats.actuation_failures += 1;
            }
            self.out.stats.commands += 1;
            if cmd.is_emergency() {
                self.out.stats.emergencies += 1;
            }
            self.out.commands.push(*cmd);
        }
        self.out.trace.push(TraceRow {
            frame_index,
            timestamp_ms: ts,
            tracks: self.tracker.tracks().len(),
            scores: output.assessments.iter().map(|a| (a.track_id, a.score)).collect(),
            alert: output.assessments.iter().any(|a| a.alert),
            emergency: output.emergency.is_some(),
            duty: command.map(|c| c.duty),
        });
    }

    /// Replays whole streams (one per camera) in timestamp order and returns the run.
    pub fn run(mut self, streams: Vec<Vec<FramePacket>>) -> Result<RunOutput, PipelineError> {
        let position: BTreeMap<u32, u32> = self
            .config
            .cameras
            .iter()
            .map(|c| (c.camera_id, c.position_index))
            .collect();
        let mut packets: Vec<FramePacket> = streams.into_iter().flatten().collect();
        packets.sort_by_key(|p| (p.timestamp_ms, position.get(&p.camera_id).copied().unwrap_or(u32::MAX)));
        for packet in packets {
            self.push(packet)?;
        }
        Ok(self.finish())
    }

    /// Flushes the backend and returns everything recorded so far.
    pub fn finish(mut self) -> RunOutput {
        if let Err(e) = self.actuator.flush() {
            warn!("actuation flush failed: {e}");
            self.out.stats.actuation_failures += 1;
        }
        self.out
    }
}

/// Runs `streams` through a fresh pipeline built from `config`.
pub fn run_pipeline(streams: Vec<Vec<FramePacket>>, config: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    Pipeline::new(config)?.run(streams)
}

/// Reads one JSON-lines detection stream from disk.
pub fn read_stream_file(path: &Path, labels: &LabelRegistry) -> Result<Vec<FramePacket>, PipelineError> {
    let file = File::open(path).map_err(|source| PipelineError::Open {
        path: path.to_owned(),
        source,
    })?;
    read_stream(BufReader::new(file), labels).map_err(|source| PipelineError::Stream {
        path: path.to_owned(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{BoundingBox, Detection};
    use crate::risk::RiskWeights;

    fn config() -> PipelineConfig {
        PipelineConfig::default()
    }

    fn packet(cam: u32, frame: u64, dets: Vec<Detection>) -> FramePacket {
        FramePacket {
            camera_id: cam,
            frame_index: frame,
            timestamp_ms: frame * 100,
            frame_width: 1920,
            frame_height: 1080,
            detections: dets,
        }
    }

    fn empty_streams(frames: u64) -> Vec<Vec<FramePacket>> {
        (0..3).map(|c| (0..frames).map(|f| packet(c, f, vec![])).collect()).collect()
    }

    #[test]
    fn empty_streams_give_empty_log() {
        let out = run_pipeline(vec![vec![], vec![], vec![]], &config()).unwrap();
        assert!(out.commands.is_empty() && out.trace.is_empty());
        let out = run_pipeline(empty_streams(10), &config()).unwrap();
        assert!(out.commands.is_empty());
        assert_eq!(out.stats.processed, 10);
    }

    #[test]
    fn stride_halves_processed_ticks() {
        let mut cfg = config();
        cfg.frame_stride = 2;
        let out = run_pipeline(empty_streams(10), &cfg).unwrap();
        assert_eq!(out.stats.ticks, 10);
        assert_eq!(out.stats.processed, 5);
        assert_eq!(out.stats.skipped_stride, 5);
    }

    #[test]
    fn misaligned_ticks_are_skipped() {
        let mut streams = empty_streams(5);
        for p in &mut streams[2] {
            p.timestamp_ms += 80;
        }
        let out = run_pipeline(streams, &config()).unwrap();
        assert!(out.stats.skipped_alignment > 0);
        assert_eq!(out.stats.processed + out.stats.skipped_alignment, out.stats.ticks);
    }

    #[test]
    fn unknown_camera_is_an_error() {
        let err = run_pipeline(vec![vec![packet(9, 0, vec![])]], &config()).unwrap_err();
        assert!(matches!(
            err,
            PipelineError::Fusion {
                source: FusionError::UnknownCamera(9),
                ..
            }
        ));
    }

    #[test]
    fn close_brake_light_triggers_emergency() {
        let labels = LabelRegistry::default();
        let brake_on = labels.id_of_kind(ClassKind::BrakeOn);
        let car = labels.lookup("car").unwrap();
        let bbox = BoundingBox::new(860.0, 700.0, 1060.0, 1060.0);
        let mut streams = empty_streams(3);
        for p in &mut streams[1] {
            p.detections = vec![Detection::new(bbox, car, 0.9), Detection::new(bbox, brake_on, 0.9)];
        }
        let out = run_pipeline(streams.clone(), &config()).unwrap();
        assert!(out.has_emergency());
        assert_eq!(out.commands[0].duty, 1.0);
        assert!(out.log_text().lines().all(|l| l.ends_with("EMERGENCY,1")));

        let mut cfg = config();
        cfg.brake_override = false;
        let out = run_pipeline(streams, &cfg).unwrap();
        assert!(!out.has_emergency());
        assert_eq!(cfg.risk_weights(), RiskWeights {
            brake_override: false,
            ..RiskWeights::default()
        });
    }

    #[test]
    fn low_confidence_detections_are_dropped() {
        let labels = LabelRegistry::default();
        let brake_on = labels.id_of_kind(ClassKind::BrakeOn);
        let bbox = BoundingBox::new(860.0, 700.0, 1060.0, 1060.0);
        let mut streams = empty_streams(3);
        for p in &mut streams[1] {
            p.detections = vec![Detection::new(bbox, brake_on, 0.1)];
        }
        assert!(run_pipeline(streams, &config()).unwrap().commands.is_empty());
    }
}
