//! Synthetic multi-camera scenarios with an analytic collision oracle.
//!
//! The lead vehicle sits in the lead camera and closes on the host along the
//! image's vertical axis. Its gap to the host, in native pixels, is
//!
//! `gap(t) = g0 - c0 * t - d/2 * max(0, t - onset)^2`
//!
//! and contact is the first integer frame where `gap(t) <= 0`. After contact
//! the vehicle stays put. The bottom edge of the box sits at `frame_height - gap`
//! and the box grows linearly with that row, as under a flat-ground pinhole
//! camera.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{BoundingBox, ClassId, ClassKind, Detection, FramePacket, LabelRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Collision,
    NearMiss,
    Benign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lighting {
    Day,
    Night,
}

impl Lighting {
    pub fn as_str(self) -> &'static str {
        match self {
            Lighting::Day => "day",
            Lighting::Night => "night",
        }
    }

    pub fn default_dropout(self) -> f64 {
        match self {
            Lighting::Day => 0.05,
            Lighting::Night => 0.3,
        }
    }
}

impl std::str::FromStr for Lighting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "day" => Ok(Lighting::Day),
            "night" => Ok(Lighting::Night),
            other => Err(format!("unknown lighting tag `{other}`")),
        }
    }
}

/// Lead-vehicle motion in native pixels of the lead camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeadProfile {
    pub initial_gap_px: f64,
    /// Constant closing speed, px/frame. Negative values recede.
    pub closing_speed_px: f64,
    /// Extra closing acceleration after `deceleration_onset_frame`, px/frame^2.
    pub deceleration_px: f64,
    pub deceleration_onset_frame: u32,
    /// Horizontal center of the vehicle.
    pub x_px: f64,
}

impl Default for LeadProfile {
    fn default() -> Self {
        Self {
            initial_gap_px: 400.0,
            closing_speed_px: 0.0,
            deceleration_px: 0.0,
            deceleration_onset_frame: 0,
            x_px: 960.0,
        }
    }
}

impl LeadProfile {
    pub fn gap(&self, t: f64) -> f64 {
        let after = (t - self.deceleration_onset_frame as f64).max(0.0);
        self.initial_gap_px - self.closing_speed_px * t - 0.5 * self.deceleration_px * after * after
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub id: String,
    pub kind: ScenarioKind,
    pub lighting: Lighting,
    pub duration_frames: u32,
    pub fps: f64,
    pub lead: LeadProfile,
    /// Vehicles passing laterally through the side cameras.
    pub side_traffic: u32,
    pub noise_std_px: f64,
    /// Per-detection drop probability; defaults by lighting.
    pub dropout: Option<f64>,
    pub brake_onset_frame: Option<u32>,
    /// The vehicle body is detected only within this gap; brake lights are always visible.
    pub visibility_gap_px: Option<f64>,
    pub cameras: u32,
    pub lead_camera: u32,
    pub frame_width: u32,
    pub frame_height: u32,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            id: "scenario".into(),
            kind: ScenarioKind::Benign,
            lighting: Lighting::Day,
            duration_frames: 50,
            fps: 10.0,
            lead: LeadProfile::default(),
            side_traffic: 0,
            noise_std_px: 2.0,
            dropout: None,
            brake_onset_frame: None,
            visibility_gap_px: None,
            cameras: 3,
            lead_camera: 1,
            frame_width: 1920,
            frame_height: 1080,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScenarioError {
    #[error("scenario `{id}`: {reason}")]
    Invalid { id: String, reason: String },
    #[error("scenario `{id}`: collision never happens within {duration} frames")]
    NoContact { id: String, duration: u32 },
    #[error("scenario `{id}`: {kind:?} scenario reaches contact at frame {frame}")]
    UnexpectedContact { id: String, kind: ScenarioKind, frame: u32 },
    #[error("invalid scenario spec: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario_id: String,
    pub collision: bool,
    pub contact_frame: Option<u32>,
    pub lighting: Lighting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScenario {
    pub truth: GroundTruth,
    /// One stream per camera, ordered by camera id.
    pub streams: Vec<Vec<FramePacket>>,
}

impl ScenarioSpec {
    /// Parses and validates a TOML spec.
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let spec: Self = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn dropout(&self) -> f64 {
        self.dropout.unwrap_or_else(|| self.lighting.default_dropout())
    }

    /// First frame with `gap <= 0`, if any within the duration.
    pub fn contact_frame(&self) -> Option<u32> {
        (0..self.duration_frames).find(|&t| self.lead.gap(t as f64) <= 0.0)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |reason: &str| ScenarioError::Invalid {
            id: self.id.clone(),
            reason: reason.to_owned(),
        };
        if self.id.is_empty() || self.id.contains([',', '/', '\\']) || self.id.trim() != self.id {
            return Err(invalid("id must be non-empty without commas, slashes or surrounding spaces"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(invalid("fps must be positive"));
        }
        if self.duration_frames == 0 {
            return Err(invalid("duration_frames must be positive"));
        }
        if !(0.0..=1.0).contains(&self.dropout()) {
            return Err(invalid("dropout must lie in [0, 1]"));
        }
        if !(self.noise_std_px.is_finite() && self.noise_std_px >= 0.0) {
            return Err(invalid("noise_std_px must be non-negative"));
        }
        if self.cameras == 0 || self.lead_camera >= self.cameras {
            return Err(invalid("lead_camera must index one of the cameras"));
        }
        if self.frame_width == 0 || self.frame_height == 0 {
            return Err(invalid("frame size must be positive"));
        }
        let l = &self.lead;
        if ![l.initial_gap_px, l.closing_speed_px, l.deceleration_px, l.x_px].iter().all(|v| v.is_finite()) {
            return Err(invalid("lead profile must be finite"));
        }
        if l.initial_gap_px <= 0.0 {
            return Err(invalid("initial gap must be positive"));
        }
        match (self.kind, self.contact_frame()) {
            (ScenarioKind::Collision, None) => Err(ScenarioError::NoContact {
                id: self.id.clone(),
                duration: self.duration_frames,
            }),
            (kind @ (ScenarioKind::NearMiss | ScenarioKind::Benign), Some(frame)) => {
                Err(ScenarioError::UnexpectedContact {
                    id: self.id.clone(),
                    kind,
                    frame,
                })
            }
            _ => Ok(()),
        }
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let contact_frame = self.contact_frame();
        GroundTruth {
            scenario_id: self.id.clone(),
            collision: self.kind == ScenarioKind::Collision,
            contact_frame: if self.kind == ScenarioKind::Collision {
                contact_frame
            } else {
                None
            },
            lighting: self.lighting,
        }
    }

    /// Noise-free lead-vehicle box at frame `t`, before visibility and clipping.
    pub fn lead_box(&self, t: u32) -> BoundingBox {
        let t = self.contact_frame().map_or(t, |c| t.min(c));
        let gap = self.lead.gap(t as f64).max(0.0);
        let y_bottom = self.frame_height as f64 - gap;
        let h = 40.0 + 0.35 * y_bottom;
        let w = 1.3 * h;
        BoundingBox::new(self.lead.x_px - w / 2.0, y_bottom - h, self.lead.x_px + w / 2.0, y_bottom)
    }

    pub fn timestamp_ms(&self, t: u32) -> u64 {
        (t as f64 * 1000.0 / self.fps).round() as u64
    }
}

struct SideVehicle {
    camera: u32,
    y_bottom: f64,
    x0: f64,
    vx: f64,
}

fn perturb(
    bbox: &BoundingBox,
    noise: Option<&Normal<f64>>,
    rng: &mut ChaCha8Rng,
    width: f64,
    height: f64,
) -> Option<BoundingBox> {
    let mut c = [bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max];
    if let Some(n) = noise {
        for v in &mut c {
            *v += n.sample(rng);
        }
    }
    let clipped = BoundingBox::new(
        c[0].clamp(0.0, width),
        c[1].clamp(0.0, height),
        c[2].clamp(0.0, width),
        c[3].clamp(0.0, height),
    );
    (clipped.width() >= 4.0 && clipped.height() >= 4.0).then_some(clipped)
}

/// Builds the per-camera streams and the ground truth. Deterministic in `seed`;
/// the ground truth does not depend on it.
pub fn generate_scenario(
    spec: &ScenarioSpec,
    seed: u64,
    labels: &LabelRegistry,
) -> Result<GeneratedScenario, ScenarioError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (spec.noise_std_px > 0.0).then(|| Normal::new(0.0, spec.noise_std_px).expect("std checked"));
    let dropout = spec.dropout();
    let (w, h) = (spec.frame_width as f64, spec.frame_height as f64);
    let vehicle = labels.lookup("car").unwrap_or(ClassId(0));
    let brake_on = labels.id_of_kind(ClassKind::BrakeOn);
    let brake_off = labels.id_of_kind(ClassKind::BrakeOff);

    let side_cameras: Vec<u32> = (0..spec.cameras).filter(|&c| c != spec.lead_camera).collect();
    let side: Vec<SideVehicle> = (0..spec.side_traffic)
        .filter(|_| !side_cameras.is_empty())
        .map(|i| SideVehicle {
            camera: side_cameras[i as usize % side_cameras.len()],
            y_bottom: rng.random_range(0.55..0.95) * h,
            x0: rng.random_range(0.0..w),
            vx: rng.random_range(-25.0..25.0),
        })
        .collect();

    let mut streams: Vec<Vec<FramePacket>> = (0..spec.cameras).map(|_| Vec::new()).collect();
    for t in 0..spec.duration_frames {
        let ts = spec.timestamp_ms(t);
        for (cam, stream) in streams.iter_mut().enumerate() {
            let cam = cam as u32;
            let mut detections = Vec::new();
            if cam == spec.lead_camera {
                let truth = spec.lead_box(t);
                let gap = h - truth.y_max;
                let body_visible = spec.visibility_gap_px.is_none_or(|v| gap <= v);
                if body_visible && !rng.random_bool(dropout) {
                    if let Some(b) = perturb(&truth, noise.as_ref(), &mut rng, w, h) {
                        detections.push(Detection::new(b, vehicle, rng.random_range(0.6..0.95)));
                    }
                }
                if let Some(onset) = spec.brake_onset_frame {
                    if !rng.random_bool(dropout) {
                        if let Some(b) = perturb(&truth, noise.as_ref(), &mut rng, w, h) {
                            let class = if t >= onset { brake_on } else { brake_off };
                            detections.push(Detection::new(b, class, rng.random_range(0.5..0.9)));
                        }
                    }
                }
            }
            for v in side.iter().filter(|v| v.camera == cam) {
                let bh = 40.0 + 0.35 * v.y_bottom;
                let x = (v.x0 + v.vx * t as f64).rem_euclid(w + 2.0 * bh) - bh;
                let truth = BoundingBox::new(x - 0.65 * bh, v.y_bottom - bh, x + 0.65 * bh, v.y_bottom);
                if !rng.random_bool(dropout) {
                    if let Some(b) = perturb(&truth, noise.as_ref(), &mut rng, w, h) {
                        detections.push(Detection::new(b, vehicle, rng.random_range(0.6..0.95)));
                    }
                }
            }
            stream.push(FramePacket {
                camera_id: cam,
                frame_index: t as u64,
                timestamp_ms: ts,
                frame_width: spec.frame_width,
                frame_height: spec.frame_height,
                detections,
            });
        }
    }
    Ok(GeneratedScenario {
        truth: spec.ground_truth(),
        streams,
    })
}
