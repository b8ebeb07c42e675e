//! Image-plane speed and relative acceleration of tracked objects.
//!
//! Speeds are apparent speeds in the composite plane relative to the host
//! camera. The relative-acceleration value is a dimensionless index consumed
//! only by the risk score.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tracking::Track;

pub const SPEED_BUFFER_LEN: usize = 20;
const HALF: usize = SPEED_BUFFER_LEN / 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub x: f64,
    pub y: f64,
    pub frame_index: u64,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KinematicsConfig {
    /// Pixels per meter; per-camera values take precedence in the pipeline.
    pub ppm: f64,
    pub fps: f64,
    /// Detection runs on every `frame_stride`-th frame.
    pub frame_stride: u32,
    pub beta: f64,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self {
            ppm: 20.0,
            fps: 10.0,
            frame_stride: 1,
            beta: 0.0625,
        }
    }
}

impl KinematicsConfig {
    /// Effective sampling rate, in samples per second.
    pub fn time_const(&self) -> f64 {
        self.fps / self.frame_stride as f64
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.ppm) {
            return Err(KinematicsError::InvalidConfig("ppm must be positive"));
        }
        if !positive(self.fps) {
            return Err(KinematicsError::InvalidConfig("fps must be positive"));
        }
        if self.frame_stride == 0 {
            return Err(KinematicsError::InvalidConfig("frame_stride must be at least 1"));
        }
        if !positive(self.beta) {
            return Err(KinematicsError::InvalidConfig("beta must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum KinematicsError {
    #[error("points must come from increasing frames ({from} -> {to})")]
    FrameOrder { from: u64, to: u64 },
    #[error("speed sample {0} must be finite and non-negative")]
    InvalidSpeed(f64),
    #[error("insufficient history: {have} of {SPEED_BUFFER_LEN} speed samples")]
    InsufficientHistory { have: usize },
    #[error("invalid kinematics config: {0}")]
    InvalidConfig(&'static str),
}

/// Euclidean pixel displacement between two reference points.
pub fn pixel_displacement(p0: &TrackPoint, p1: &TrackPoint) -> Result<f64, KinematicsError> {
    if p1.frame_index <= p0.frame_index {
        return Err(KinematicsError::FrameOrder {
            from: p0.frame_index,
            to: p1.frame_index,
        });
    }
    Ok((p1.x - p0.x).hypot(p1.y - p0.y))
}

/// Speed in km/h for a displacement of `displacement` pixels per detection sample.
pub fn speed_kmh(displacement: f64, cfg: &KinematicsConfig) -> f64 {
    displacement / cfg.ppm * cfg.time_const() * 3.6
}

/// Fixed 20-slot FIFO of speed samples; the oldest ten form the initial half.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeedBuffer {
    values: VecDeque<f64>,
}

impl SpeedBuffer {
    pub fn new() -> Self {
        Self {
            values: VecDeque::with_capacity(SPEED_BUFFER_LEN),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == SPEED_BUFFER_LEN
    }

    /// Oldest first.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    pub fn clear(&mut self) {
        self.values.clear();
    }
}

/// Appends a sample, evicting the oldest when full.
pub fn push_speed(buffer: &mut SpeedBuffer, speed: f64) -> Result<(), KinematicsError> {
    if !(speed.is_finite() && speed >= 0.0) {
        return Err(KinematicsError::InvalidSpeed(speed));
    }
    if buffer.values.len() == SPEED_BUFFER_LEN {
        buffer.values.pop_front();
    }
    buffer.values.push_back(speed);
    Ok(())
}

/// `(mean of newest 10 - mean of oldest 10) / (20 * beta)`; positive when the
/// apparent speed is growing.
pub fn relative_acceleration(buffer: &SpeedBuffer, beta: f64) -> Result<f64, KinematicsError> {
    if !buffer.is_full() {
        return Err(KinematicsError::InsufficientHistory { have: buffer.len() });
    }
    let initial: f64 = buffer.values.iter().take(HALF).sum::<f64>() / HALF as f64;
    let last: f64 = buffer.values.iter().skip(HALF).sum::<f64>() / HALF as f64;
    Ok((last - initial) / (SPEED_BUFFER_LEN as f64 * beta))
}

/// Pushes the speed between the track's two latest reference points.
///
/// Gaps longer than one detection sample are normalized to a per-sample
/// displacement. Returns the pushed speed, or `None` with fewer than two points.
pub fn update_track_speed(track: &mut Track, cfg: &KinematicsConfig) -> Result<Option<f64>, KinematicsError> {
    let n = track.history.len();
    if n < 2 {
        return Ok(None);
    }
    let (p0, p1) = (&track.history[n - 2], &track.history[n - 1]);
    let displacement = pixel_displacement(p0, p1)?;
    let frames = (p1.frame_index - p0.frame_index) as f64;
    let samples = (frames / cfg.frame_stride as f64).max(1.0);
    let speed = speed_kmh(displacement / samples, cfg);
    push_speed(&mut track.speed_buffer, speed)?;
    Ok(Some(speed))
}
