//! Deterministic workloads for the stage benchmarks.

use brakesense_core::detection::{BoundingBox, ClassId, Detection, FramePacket};
use brakesense_core::eval::{synthetic_load, LoadSpec};
use brakesense_core::fusion::FusedDetection;
use brakesense_core::tracking::CostMatrix;

/// Square cost matrix with entries spread over `[0, 1)` by a fixed LCG.
pub fn cost_matrix(n: usize, seed: u64) -> CostMatrix {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..n)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (state >> 11) as f64 / (1u64 << 53) as f64
                })
                .collect()
        })
        .collect();
    CostMatrix::from_rows(&rows)
}

/// `frames` detection sets of `objects` boxes drifting right at 3 px per frame.
pub fn tracker_frames(objects: usize, frames: u64) -> Vec<Vec<FusedDetection>> {
    (0..frames)
        .map(|t| {
            (0..objects)
                .map(|i| {
                    let x = 40.0 + 180.0 * (i % 20) as f64 + 3.0 * t as f64;
                    let y = 60.0 + 150.0 * (i / 20) as f64;
                    FusedDetection {
                        detection: Detection::new(BoundingBox::new(x, y, x + 80.0, y + 60.0), ClassId(0), 0.9),
                        camera_id: 0,
                    }
                })
                .collect()
        })
        .collect()
}

/// Three-camera synthetic load.
pub fn pipeline_load(frames: u64, detections_per_camera: usize, dropout: f64) -> Vec<Vec<FramePacket>> {
    let spec = LoadSpec {
        frames,
        detections_per_camera,
        dropout,
        ..LoadSpec::default()
    };
    synthetic_load(&spec, 11)
}
