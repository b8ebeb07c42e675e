use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use tracing::trace;

use super::assignment::{solve_assignment, CostMatrix, GATED};
use super::kalman::{KalmanFilter, KalmanParams, KalmanState, CHI2_95_4DOF};
use crate::detection::{BoundingBox, ClassId};
use crate::fusion::{CompositePacket, FusedDetection};
use crate::kinematics::{SpeedBuffer, TrackPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub track_id: u64,
    pub state: KalmanState,
    pub status: TrackStatus,
    /// Consecutive frames with an associated detection.
    pub hits: u32,
    pub age_since_update: u32,
    /// Recent bottom-center reference points, oldest first.
    pub history: VecDeque<TrackPoint>,
    pub speed_buffer: SpeedBuffer,
    pub appearance: Option<Vec<f32>>,
    /// Camera of the last associated detection.
    pub camera_id: u32,
    pub class_id: ClassId,
}

impl Track {
    pub fn bbox(&self) -> BoundingBox {
        self.state.bbox()
    }

    pub fn is_confirmed(&self) -> bool {
        self.status == TrackStatus::Confirmed
    }

    pub fn last_point(&self) -> Option<&TrackPoint> {
        self.history.back()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssociationWeights {
    /// Weight of the IoU term; `1 - lambda` goes to appearance when available.
    pub lambda: f64,
    /// Squared Mahalanobis gate.
    pub gate: f64,
    /// Pairs costlier than this are not associated.
    pub max_cost: f64,
}

impl Default for AssociationWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gate: CHI2_95_4DOF,
            max_cost: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub n_init: u32,
    pub max_age: u32,
    pub association: AssociationWeights,
    pub kalman: KalmanParams,
    pub history_len: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            n_init: 3,
            max_age: 30,
            association: AssociationWeights::default(),
            kalman: KalmanParams::default(),
            history_len: 32,
        }
    }
}

/// Time reference of one tracker step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameStamp {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    /// Prediction steps since the previous tracker step.
    pub dt_frames: u32,
}

/// `0.5 * (1 - cosine similarity)`, or `None` if either side has no usable embedding.
pub fn appearance_cost(a: Option<&[f32]>, b: Option<&[f32]>) -> Option<f64> {
    let (a, b) = (a?, b?);
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(0.5 * (1.0 - (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)))
}

/// Association costs between predicted tracks and detections.
///
/// Entries outside the Mahalanobis gate, or disjoint boxes that could never pass
/// `max_cost`, are [`GATED`]. Without embeddings on both sides the cost is
/// `1 - IoU`.
pub fn cost_matrix(
    kf: &KalmanFilter,
    tracks: &[Track],
    detections: &[FusedDetection],
    weights: &AssociationWeights,
) -> CostMatrix {
    let mut cost = CostMatrix::filled(tracks.len(), detections.len(), GATED);
    for (i, track) in tracks.iter().enumerate() {
        let predicted = track.bbox();
        let gate = kf.gate(&track.state);
        for (j, det) in detections.iter().enumerate() {
            let bbox = &det.detection.bbox;
            let iou_only = track.appearance.is_none() || det.detection.embedding.is_none();
            if iou_only && weights.max_cost < 1.0 && predicted.intersection(bbox) <= 0.0 {
                continue;
            }
            if gate.distance(bbox.to_xyah()) > weights.gate {
                continue;
            }
            let iou_cost = 1.0 - predicted.iou(bbox);
            let value = match appearance_cost(track.appearance.as_deref(), det.detection.embedding.as_deref()) {
                Some(app) => weights.lambda * iou_cost + (1.0 - weights.lambda) * app,
                None => iou_cost,
            };
            cost.set(i, j, value);
        }
    }
    cost
}

/// Single-owner multi-object tracker. Track ids are never reused.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    kf: KalmanFilter,
    tracks: Vec<Track>,
    next_id: u64,
    frame_counter: u64,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            kf: KalmanFilter::new(config.kalman),
            config,
            tracks: Vec::new(),
            next_id: 1,
            frame_counter: 0,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn filter(&self) -> &KalmanFilter {
        &self.kf
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn tracks_mut(&mut self) -> &mut [Track] {
        &mut self.tracks
    }

    /// Steps with all detections of a composite packet, one frame after the previous step.
    pub fn step_packet(&mut self, packet: &CompositePacket) -> &[Track] {
        let stamp = FrameStamp {
            frame_index: self.frame_counter,
            timestamp_ms: packet.timestamp_ms,
            dt_frames: 1,
        };
        self.step(&packet.detections, stamp)
    }

    /// Predict, associate, update, then age and spawn. Returns surviving tracks.
    pub fn step(&mut self, detections: &[FusedDetection], stamp: FrameStamp) -> &[Track] {
        self.frame_counter = stamp.frame_index + 1;
        for track in &mut self.tracks {
            track.state = self.kf.predict(&track.state, stamp.dt_frames);
        }

        let cost = cost_matrix(&self.kf, &self.tracks, detections, &self.config.association);
        let mut gated = cost;
        for i in 0..gated.rows() {
            for j in 0..gated.cols() {
                if gated.get(i, j) > self.config.association.max_cost {
                    gated.set(i, j, GATED);
                }
            }
        }
        let assignment = solve_assignment(&gated);

        for &(ti, di) in &assignment.matches {
            let det = &detections[di];
            let track = &mut self.tracks[ti];
            match self.kf.update(&track.state, det.detection.bbox.to_xyah()) {
                Ok(state) => track.state = state,
                Err(e) => {
                    trace!(track = track.track_id, "skipping update: {e}");
                    continue;
                }
            }
            track.hits += 1;
            track.age_since_update = 0;
            track.camera_id = det.camera_id;
            track.class_id = det.detection.class_id;
            if det.detection.embedding.is_some() {
                track.appearance = det.detection.embedding.clone();
            }
            if track.status == TrackStatus::Tentative && track.hits >= self.config.n_init {
                track.status = TrackStatus::Confirmed;
            }
        }
        for &ti in &assignment.unmatched_tracks {
            let track = &mut self.tracks[ti];
            track.age_since_update += 1;
            if track.status == TrackStatus::Tentative {
                track.hits = 0;
            }
        }
        for track in &mut self.tracks {
            let degenerate = !(track.state.mean[2] > 0.0 && track.state.mean[3] > 0.0);
            if track.age_since_update > self.config.max_age || degenerate {
                track.status = TrackStatus::Deleted;
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Deleted);

        for &di in &assignment.unmatched_detections {
            let det = &detections[di];
            let state = self.kf.initiate(det.detection.bbox.to_xyah());
            let mut track = Track {
                track_id: self.next_id,
                state,
                status: TrackStatus::Tentative,
                hits: 1,
                age_since_update: 0,
                history: VecDeque::with_capacity(self.config.history_len),
                speed_buffer: SpeedBuffer::new(),
                appearance: det.detection.embedding.clone(),
                camera_id: det.camera_id,
                class_id: det.detection.class_id,
            };
            if self.config.n_init <= 1 {
                track.status = TrackStatus::Confirmed;
            }
            self.next_id += 1;
            self.tracks.push(track);
        }

        let cap = self.config.history_len.max(2);
        for track in &mut self.tracks {
            let (x, y) = track.bbox().bottom_center();
            if track.history.len() == cap {
                track.history.pop_front();
            }
            track.history.push_back(TrackPoint {
                x,
                y,
                frame_index: stamp.frame_index,
                timestamp_ms: stamp.timestamp_ms,
            });
        }
        &self.tracks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::Detection;

    fn det(x: f64, y: f64) -> FusedDetection {
        FusedDetection {
            detection: Detection::new(BoundingBox::new(x, y, x + 40.0, y + 80.0), ClassId(0), 0.9),
            camera_id: 0,
        }
    }

    fn stamp(frame: u64) -> FrameStamp {
        FrameStamp {
            frame_index: frame,
            timestamp_ms: frame * 100,
            dt_frames: 1,
        }
    }

    #[test]
    fn spawns_tentative_tracks() {
        let mut t = Tracker::new(TrackerConfig::default());
        let tracks = t.step(&[det(0.0, 0.0), det(100.0, 0.0), det(200.0, 0.0)], stamp(0));
        assert_eq!(tracks.len(), 3);
        assert!(tracks.iter().all(|t| t.status == TrackStatus::Tentative));
        assert_eq!(tracks.iter().map(|t| t.track_id).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn confirms_after_n_init_hits() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.step(&[det(0.0, 0.0)], stamp(0));
        t.step(&[det(2.0, 0.0)], stamp(1));
        assert_eq!(t.tracks()[0].status, TrackStatus::Tentative);
        let tracks = t.step(&[det(4.0, 0.0)], stamp(2));
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].status, TrackStatus::Confirmed);
        assert_eq!(tracks[0].history.len(), 3);
    }

    #[test]
    fn deleted_after_max_age_and_id_not_reused() {
        let cfg = TrackerConfig {
            max_age: 5,
            ..TrackerConfig::default()
        };
        let mut t = Tracker::new(cfg);
        for f in 0..3 {
            t.step(&[det(0.0, 0.0)], stamp(f));
        }
        let id = t.tracks()[0].track_id;
        for f in 3..3 + 5 {
            t.step(&[], stamp(f));
            assert_eq!(t.tracks().len(), 1, "frame {f}");
        }
        assert!(t.step(&[], stamp(8)).is_empty());
        let tracks = t.step(&[det(0.0, 0.0)], stamp(9));
        assert_eq!(tracks.len(), 1);
        assert!(tracks[0].track_id > id);
    }

    #[test]
    fn tentative_hits_reset_on_miss() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.step(&[det(0.0, 0.0)], stamp(0));
        t.step(&[det(0.0, 0.0)], stamp(1));
        t.step(&[], stamp(2));
        t.step(&[det(0.0, 0.0)], stamp(3));
        t.step(&[det(0.0, 0.0)], stamp(4));
        assert_eq!(t.tracks()[0].status, TrackStatus::Tentative);
        t.step(&[det(0.0, 0.0)], stamp(5));
        assert_eq!(t.tracks()[0].status, TrackStatus::Confirmed);
    }

    #[test]
    fn cost_matrix_iou_and_gate() {
        let kf = KalmanFilter::default();
        let mut tracker = Tracker::new(TrackerConfig::default());
        tracker.step(&[det(100.0, 100.0)], stamp(0));
        let tracks = tracker.tracks();
        let w = AssociationWeights::default();
        let same = cost_matrix(&kf, tracks, &[det(100.0, 100.0)], &w);
        assert!(same.get(0, 0).abs() < 1e-12);
        // Far outside the predicted covariance: gated regardless of IoU.
        let far = cost_matrix(&kf, tracks, &[det(400.0, 100.0)], &w);
        assert!(far.is_gated(0, 0));
        assert!(kf.gating_distance(&tracks[0].state, det(400.0, 100.0).detection.bbox.to_xyah()) > CHI2_95_4DOF);
        let loose = AssociationWeights {
            gate: f64::MAX,
            ..w
        };
        assert!(cost_matrix(&kf, tracks, &[det(400.0, 100.0)], &loose).is_gated(0, 0));
        let permissive = AssociationWeights {
            max_cost: 1.0,
            ..loose
        };
        assert_eq!(cost_matrix(&kf, tracks, &[det(400.0, 100.0)], &permissive).get(0, 0), 1.0);
    }

    #[test]
    fn appearance_blends_when_both_present() {
        assert_eq!(appearance_cost(Some(&[1.0, 0.0]), Some(&[1.0, 0.0])), Some(0.0));
        assert_eq!(appearance_cost(Some(&[1.0, 0.0]), Some(&[-1.0, 0.0])), Some(1.0));
        assert_eq!(appearance_cost(Some(&[1.0, 0.0]), None), None);
        assert_eq!(appearance_cost(Some(&[1.0]), Some(&[1.0, 0.0])), None);
    }
}
