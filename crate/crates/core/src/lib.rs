//! Multi-camera forward-collision pipeline.
//!
//! Detection streams from several cameras are fused into one composite plane,
//! tracked with a Kalman filter and Hungarian association, turned into speed
//! and relative-acceleration estimates, scored for collision risk, and mapped
//! to a PWM braking command. The [`eval`] module generates synthetic scenarios
//! and computes detection metrics over them.

pub mod actuator;
pub mod config;
pub mod detection;
pub mod eval;
pub mod fusion;
pub mod kinematics;
pub mod pipeline;
pub mod risk;
pub mod tracking;

pub use actuator::{
    ActuationError, ActuationRecord, Actuator, ActuatorBackend, BrakeCause, BrakeCommand, FileBackend,
    LogBackend, MemoryBackend, NullBackend,
};
pub use config::{ConfigError, PipelineConfig};
pub use detection::{
    BoundingBox, ClassId, ClassKind, Detection, FramePacket, LabelRegistry, PacketError, StreamError,
};
pub use fusion::{CameraConfig, CompositeLayout, CompositePacket, FusedDetection, FusionError, StreamFusion};
pub use kinematics::{KinematicsConfig, KinematicsError, SpeedBuffer, TrackPoint};
pub use pipeline::{Pipeline, PipelineError, RunOutput, TraceRow};
pub use risk::{HostGrid, RiskAssessment, RiskEngine, RiskOutput, RiskWeights};
pub use tracking::{KalmanFilter, KalmanState, Track, TrackStatus, Tracker, TrackerConfig};
