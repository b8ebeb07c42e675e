//! Pipeline configuration: one TOML file with flat keys plus a `[[cameras]]`
//! array. Unknown keys are rejected.
//!
//! Any top-level key can be overridden from the environment as
//! `BRAKESENSE_CFG_<KEY>` (upper case), e.g. `BRAKESENSE_CFG_FRAME_STRIDE=2`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{LabelError, LabelRegistry, DEFAULT_VEHICLE_CLASSES};
use crate::fusion::{CameraConfig, CompositeLayout, FusionError};
use crate::kinematics::KinematicsConfig;
use crate::risk::{HostGrid, RiskWeights};
use crate::tracking::{AssociationWeights, KalmanParams, TrackerConfig, CHI2_95_4DOF};

pub const ENV_PREFIX: &str = "BRAKESENSE_CFG_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: &str, reason: impl ToString) -> Self {
        Self::Invalid {
            field: field.to_owned(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub cameras: Vec<CameraConfig>,
    pub vehicle_classes: Vec<String>,
    pub tolerance_ms: u64,
    pub min_confidence: f64,

    pub n_init: u32,
    pub max_age: u32,
    pub gate: f64,
    pub max_cost: f64,
    pub lambda: f64,
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
    pub std_weight_measurement: f64,
    pub history_len: usize,

    pub fps: f64,
    pub frame_stride: u32,
    pub beta: f64,

    pub w_accel: f64,
    pub w_proximity: f64,
    pub w_brake: f64,
    pub a_ref: f64,
    pub threshold: f64,
    pub p_emerg: f64,
    pub debounce_frames: u32,
    pub brake_iou: f64,
    pub brake_override: bool,
    /// Defaults to the lower half of the central tile.
    pub grid: Option<HostGrid>,

    pub frequency_hz: f64,
    pub actuation_log: Option<PathBuf>,
    pub backend_timeout_ms: u64,
}

/// Three 1920x1080 cameras resized to 1280x720 tiles, ppm 20.
pub fn default_cameras() -> Vec<CameraConfig> {
    (0..3).map(|i| CameraConfig::new(i, i, (1920, 1080), (1280, 720))).collect()
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let tracker = TrackerConfig::default();
        let kin = KinematicsConfig::default();
        let risk = RiskWeights::default();
        Self {
            cameras: default_cameras(),
            vehicle_classes: DEFAULT_VEHICLE_CLASSES.iter().map(|s| s.to_string()).collect(),
            tolerance_ms: 50,
            min_confidence: 0.25,
            n_init: tracker.n_init,
            max_age: tracker.max_age,
            gate: CHI2_95_4DOF,
            max_cost: tracker.association.max_cost,
            lambda: tracker.association.lambda,
            std_weight_position: tracker.kalman.std_weight_position,
            std_weight_velocity: tracker.kalman.std_weight_velocity,
            std_weight_measurement: tracker.kalman.std_weight_measurement,
            history_len: tracker.history_len,
            fps: kin.fps,
            frame_stride: kin.frame_stride,
            beta: kin.beta,
            w_accel: risk.w_accel,
            w_proximity: risk.w_proximity,
            w_brake: risk.w_brake,
            a_ref: risk.a_ref,
            threshold: risk.threshold,
            p_emerg: risk.p_emerg,
            debounce_frames: risk.debounce_frames,
            brake_iou: risk.brake_iou,
            brake_override: risk.brake_override,
            grid: None,
            frequency_hz: crate::actuator::DEFAULT_FREQUENCY_HZ,
            actuation_log: None,
            backend_timeout_ms: 5,
        }
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

impl PipelineConfig {
    /// Parses TOML text and applies `overrides` (`(KEY, value)` pairs without prefix).
    pub fn from_toml_with<I>(text: &str, overrides: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (key, raw) in overrides {
            table.insert(key.to_ascii_lowercase(), parse_env_value(&raw));
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, std::iter::empty())
    }

    /// Loads a file and applies `BRAKESENSE_CFG_*` environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_with(&text, env_overrides(std::env::vars()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let layout = self.layout().map_err(|e| ConfigError::invalid("cameras", e))?;
        self.labels().map_err(|e| ConfigError::invalid("vehicle_classes", e))?;
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(ConfigError::invalid("min_confidence", "must lie in [0, 1]"));
        }
        if self.n_init == 0 {
            return Err(ConfigError::invalid("n_init", "must be at least 1"));
        }
        if self.gate.is_nan() || self.gate <= 0.0 {
            return Err(ConfigError::invalid("gate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ConfigError::invalid("lambda", "must lie in [0, 1]"));
        }
        for (name, v) in [
            ("std_weight_position", self.std_weight_position),
            ("std_weight_velocity", self.std_weight_velocity),
            ("std_weight_measurement", self.std_weight_measurement),
            ("max_cost", self.max_cost),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(name, "must be non-negative"));
            }
        }
        if self.history_len < 2 {
            return Err(ConfigError::invalid("history_len", "must be at least 2"));
        }
        for cam in &self.cameras {
            self.kinematics_for(cam.ppm).validate().map_err(|e| {
                let field = match e {
                    crate::kinematics::KinematicsError::InvalidConfig(msg) => msg.split(' ').next().unwrap_or("kinematics"),
                    _ => "kinematics",
                };
                ConfigError::invalid(field, e)
            })?;
        }
        self.risk_weights().validate().map_err(|e| {
            let field = match &e {
                crate::risk::RiskConfigError::WeightSum(_) => "w_accel + w_proximity + w_brake",
                crate::risk::RiskConfigError::Negative(f) | crate::risk::RiskConfigError::Range(f) => f,
                crate::risk::RiskConfigError::Threshold(_) => "threshold",
                crate::risk::RiskConfigError::Grid(_) => "grid",
            };
            ConfigError::invalid(field, e)
        })?;
        self.grid(&layout)
            .validate(layout.composite_width() as f64, layout.composite_height() as f64)
            .map_err(|e| ConfigError::invalid("grid", e))?;
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(ConfigError::invalid("frequency_hz", "must be positive"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<CompositeLayout, FusionError> {
        CompositeLayout::from_cameras(&self.cameras)
    }

    pub fn labels(&self) -> Result<LabelRegistry, LabelError> {
        LabelRegistry::new(&self.vehicle_classes)
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            n_init: self.n_init,
            max_age: self.max_age,
            association: AssociationWeights {
                lambda: self.lambda,
                gate: self.gate,
                max_cost: self.max_cost,
            },
            kalman: KalmanParams {
                std_weight_position: self.std_weight_position,
                std_weight_velocity: self.std_weight_velocity,
                std_weight_measurement: self.std_weight_measurement,
                ..KalmanParams::default()
            },
            history_len: self.history_len,
        }
    }

    pub fn kinematics_for(&self, ppm: f64) -> KinematicsConfig {
        KinematicsConfig {
            ppm,
            fps: self.fps,
            frame_stride: self.frame_stride,
            beta: self.beta,
        }
    }

    pub fn risk_weights(&self) -> RiskWeights {
        RiskWeights {
            w_accel: self.w_accel,
            w_proximity: self.w_proximity,
            w_brake: self.w_brake,
            a_ref: self.a_ref,
            threshold: self.threshold,
            p_emerg: self.p_emerg,
            debounce_frames: self.debounce_frames,
            brake_iou: self.brake_iou,
            brake_override: self.brake_override,
        }
    }

    pub fn grid(&self, layout: &CompositeLayout) -> HostGrid {
        self.grid.unwrap_or_else(|| HostGrid::default_for(layout))
    }

    pub fn backend_budget(&self) -> Duration {
        Duration::from_millis(self.backend_timeout_ms)
    }
}

/// Extracts `BRAKESENSE_CFG_*` variables as `(key, value)` pairs.
pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> Vec<(String, String)> {
    let mut out: Vec<_> = vars
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|key| (key.to_owned(), v)))
        .collect();
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = PipelineConfig::from_toml("bogus = 1").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(ref m) if m.contains("bogus")), "{err}");
    }

    #[test]
    fn weight_sum_names_field() {
        let err = PipelineConfig::from_toml("w_accel = 0.7").unwrap_err();
        assert!(err.to_string().contains("w_accel"), "{err}");
    }

    #[test]
    fn env_override_applies() {
        let vars = vec![
            ("BRAKESENSE_CFG_FRAME_STRIDE".to_owned(), "2".to_owned()),
            ("PATH".to_owned(), "/bin".to_owned()),
        ];
        let cfg = PipelineConfig::from_toml_with("frame_stride = 1", env_overrides(vars)).unwrap();
        assert_eq!(cfg.frame_stride, 2);
        let bad = vec![("BRAKESENSE_CFG_NOPE".to_owned(), "1".to_owned())];
        assert!(PipelineConfig::from_toml_with("", env_overrides(bad)).is_err());
    }

    #[test]
    fn camera_table() {
        let text = r#"
            [[cameras]]
            camera_id = 7
            native_width = 640
            native_height = 360
            target_width = 640
            target_height = 360
            position_index = 0
        "#;
        let cfg = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(cfg.cameras.len(), 1);
        assert_eq!(cfg.cameras[0].ppm, 20.0);
        assert_eq!(cfg.layout().unwrap().composite_width(), 640);
    }

    #[test]
    fn grid_outside_composite_rejected() {
        let text = "grid = { x_min = 0.0, y_min = 0.0, x_max = 9000.0, y_max = 720.0, corridor_x_min = 10.0, corridor_x_max = 20.0 }";
        let err = PipelineConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("grid"));
    }
}
