//! Composite collision score, alert debouncing and the brake-light emergency path.
//!
//! `score = clamp01(w_a * clamp01(a / a_ref) + w_p * proximity + w_b * brake_on)`.
//! Receding objects (`a <= 0`) contribute nothing through the acceleration term.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::BoundingBox;
use crate::fusion::CompositeLayout;
use crate::kinematics::relative_acceleration;
use crate::tracking::Track;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RiskConfigError {
    #[error("weights w_accel + w_proximity + w_brake must sum to 1, got {0}")]
    WeightSum(f64),
    #[error("`{0}` must be non-negative and finite")]
    Negative(&'static str),
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    Threshold(f64),
    #[error("`{0}` is out of range")]
    Range(&'static str),
    #[error("grid {0}")]
    Grid(&'static str),
}

/// Monitored zone around the host vehicle plus the host's forward corridor, in
/// composite pixels. Membership is tested on the closed rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostGrid {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub corridor_x_min: f64,
    pub corridor_x_max: f64,
}

impl HostGrid {
    /// Lower half of the central tile, corridor = central third of that tile.
    pub fn default_for(layout: &CompositeLayout) -> Self {
        let center = (layout.camera_count() as u32).saturating_sub(1) / 2;
        let (x0, x1) = layout.tile_x_range(center);
        let third = (x1 - x0) / 3.0;
        let h = layout.tile_height as f64;
        Self {
            x_min: x0,
            y_min: h / 2.0,
            x_max: x1,
            y_max: h,
            corridor_x_min: x0 + third,
            corridor_x_max: x0 + 2.0 * third,
        }
    }

    pub fn validate(&self, composite_width: f64, composite_height: f64) -> Result<(), RiskConfigError> {
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(RiskConfigError::Grid("rectangle is empty"));
        }
        if self.x_min < 0.0 || self.y_min < 0.0 || self.x_max > composite_width || self.y_max > composite_height {
            return Err(RiskConfigError::Grid("exceeds the composite extents"));
        }
        if !(self.corridor_x_min < self.corridor_x_max && self.corridor_x_min >= self.x_min && self.corridor_x_max <= self.x_max) {
            return Err(RiskConfigError::Grid("corridor must lie inside the grid"));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn in_corridor(&self, x: f64) -> bool {
        x >= self.corridor_x_min && x <= self.corridor_x_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskWeights {
    pub w_accel: f64,
    pub w_proximity: f64,
    pub w_brake: f64,
    /// Acceleration index that saturates the acceleration term.
    pub a_ref: f64,
    /// Alert when the score is strictly above this value.
    pub threshold: f64,
    /// Proximity at which a brake-on detection forces an emergency stop.
    pub p_emerg: f64,
    pub debounce_frames: u32,
    /// Minimum IoU linking a brake-light detection to a track.
    pub brake_iou: f64,
    pub brake_override: bool,
}

impl Default for RiskWeights {
    fn default() -> Self {
        Self {
            w_accel: 0.5,
            w_proximity: 0.3,
            w_brake: 0.2,
            a_ref: 10.0,
            threshold: 0.6,
            p_emerg: 0.8,
            debounce_frames: 2,
            brake_iou: 0.3,
            brake_override: true,
        }
    }
}

impl RiskWeights {
    pub fn validate(&self) -> Result<(), RiskConfigError> {
        for (name, v) in [
            ("w_accel", self.w_accel),
            ("w_proximity", self.w_proximity),
            ("w_brake", self.w_brake),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(RiskConfigError::Negative(name));
            }
        }
        let sum = self.w_accel + self.w_proximity + self.w_brake;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RiskConfigError::WeightSum(sum));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(RiskConfigError::Threshold(self.threshold));
        }
        if !(self.a_ref.is_finite() && self.a_ref > 0.0) {
            return Err(RiskConfigError::Range("a_ref"));
        }
        if !(0.0..=1.0).contains(&self.p_emerg) {
            return Err(RiskConfigError::Range("p_emerg"));
        }
        if !(0.0..=1.0).contains(&self.brake_iou) {
            return Err(RiskConfigError::Range("brake_iou"));
        }
        if self.debounce_frames == 0 {
            return Err(RiskConfigError::Range("debounce_frames"));
        }
        Ok(())
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

pub fn in_grid(track: &Track, grid: &HostGrid) -> bool {
    track.last_point().is_some_and(|p| grid.contains(p.x, p.y))
}

/// Normalized bottom-edge height, halved outside the corridor.
pub fn proximity_at(x: f64, y_bottom: f64, grid: &HostGrid, composite_height: f64) -> f64 {
    let p = clamp01(y_bottom / composite_height);
    if grid.in_corridor(x) {
        p
    } else {
        p * 0.5
    }
}

/// Proximity of the track's latest reference point; 0 without history.
pub fn proximity(track: &Track, grid: &HostGrid, composite_height: f64) -> f64 {
    track
        .last_point()
        .map_or(0.0, |p| proximity_at(p.x, p.y, grid, composite_height))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreComponents {
    pub accel_term: f64,
    pub proximity_term: f64,
    pub brake_term: f64,
}

pub fn score_components(acceleration: f64, proximity: f64, brake_on: bool, w: &RiskWeights) -> ScoreComponents {
    ScoreComponents {
        accel_term: w.w_accel * clamp01(acceleration / w.a_ref),
        proximity_term: w.w_proximity * clamp01(proximity),
        brake_term: if brake_on { w.w_brake } else { 0.0 },
    }
}

pub fn collision_score(acceleration: f64, proximity: f64, brake_on: bool, w: &RiskWeights) -> f64 {
    let c = score_components(acceleration, proximity, brake_on, w);
    clamp01(c.accel_term + c.proximity_term + c.brake_term)
}

/// A brake-light detection in composite coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrakeObservation {
    pub bbox: BoundingBox,
    pub camera_id: u32,
    pub on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmergencyDirective {
    pub bbox: BoundingBox,
    pub camera_id: u32,
    pub proximity: f64,
}

/// Emergency iff a brake-on detection inside the grid and corridor is at least
/// `p_emerg` close. Picks the closest one.
pub fn brake_override(
    observations: &[BrakeObservation],
    grid: &HostGrid,
    w: &RiskWeights,
    composite_height: f64,
) -> Option<EmergencyDirective> {
    observations
        .iter()
        .filter(|o| o.on)
        .filter_map(|o| {
            let (x, y) = o.bbox.bottom_center();
            if !grid.contains(x, y) || !grid.in_corridor(x) {
                return None;
            }
            let proximity = proximity_at(x, y, grid, composite_height);
            (proximity >= w.p_emerg).then_some(EmergencyDirective {
                bbox: o.bbox,
                camera_id: o.camera_id,
                proximity,
            })
        })
        .max_by(|a, b| a.proximity.total_cmp(&b.proximity))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskAssessment {
    pub track_id: u64,
    pub score: f64,
    pub components: ScoreComponents,
    pub acceleration: f64,
    pub proximity: f64,
    pub brake_on: bool,
    pub alert: bool,
    pub emergency: bool,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RiskOutput {
    pub assessments: Vec<RiskAssessment>,
    pub emergency: Option<EmergencyDirective>,
}

/// Stateful scorer; owns the per-track debounce streaks.
#[derive(Debug, Clone)]
pub struct RiskEngine {
    weights: RiskWeights,
    grid: HostGrid,
    beta: f64,
    composite_height: f64,
    streaks: BTreeMap<u64, u32>,
}

impl RiskEngine {
    pub fn new(weights: RiskWeights, grid: HostGrid, beta: f64, composite_height: f64) -> Self {
        Self {
            weights,
            grid,
            beta,
            composite_height,
            streaks: BTreeMap::new(),
        }
    }

    pub fn weights(&self) -> &RiskWeights {
        &self.weights
    }

    pub fn grid(&self) -> &HostGrid {
        &self.grid
    }

    /// One assessment per confirmed, in-grid track with a full speed buffer.
    pub fn assess(&mut self, tracks: &[Track], brakes: &[BrakeObservation], timestamp_ms: u64) -> RiskOutput {
        let w = self.weights;
        let emergency = if w.brake_override {
            brake_override(brakes, &self.grid, &w, self.composite_height)
        } else {
            None
        };

        let mut assessments = Vec::new();
        let mut streaks = BTreeMap::new();
        for track in tracks.iter().filter(|t| t.is_confirmed() && in_grid(t, &self.grid)) {
            let Ok(acceleration) = relative_acceleration(&track.speed_buffer, self.beta) else {
                continue;
            };
            let bbox = track.bbox();
            let proximity = proximity(track, &self.grid, self.composite_height);
            let brake_on = brakes.iter().any(|b| b.on && b.bbox.iou(&bbox) >= w.brake_iou);
            let components = score_components(acceleration, proximity, brake_on, &w);
            let mut score = collision_score(acceleration, proximity, brake_on, &w);

            let streak = if score > w.threshold {
                self.streaks.get(&track.track_id).copied().unwrap_or(0) + 1
            } else {
                0
            };
            streaks.insert(track.track_id, streak);
            let mut alert = streak >= w.debounce_frames;

            let is_emergency = emergency.is_some_and(|e| e.bbox.iou(&bbox) >= w.brake_iou);
            if is_emergency {
                score = 1.0;
                alert = true;
            }
            assessments.push(RiskAssessment {
                track_id: track.track_id,
                score,
                components,
                acceleration,
                proximity,
                brake_on,
                alert,
                emergency: is_emergency,
                timestamp_ms,
            });
        }
        self.streaks = streaks;
        RiskOutput {
            assessments,
            emergency,
        }
    }
}
