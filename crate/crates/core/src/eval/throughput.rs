//! Pipeline-only throughput on synthetic detection load.

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::detection::{BoundingBox, ClassId, Detection, FramePacket};
use crate::pipeline::{run_pipeline, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoadSpec {
    pub frames: u64,
    pub cameras: u32,
    pub detections_per_camera: usize,
    pub dropout: f64,
    pub fps: f64,
    pub frame_width: u32,
    pub frame_height: u32,
}

impl Default for LoadSpec {
    fn default() -> Self {
        Self {
            frames: 10_000,
            cameras: 3,
            detections_per_camera: 20,
            dropout: 0.0,
            fps: 10.0,
            frame_width: 1920,
            frame_height: 1080,
        }
    }
}

/// Objects on a fixed lattice, each swaying slowly around its cell. In the
/// center camera the first object repeatedly approaches the host, so the
/// actuation log is not empty.
pub fn synthetic_load(spec: &LoadSpec, seed: u64) -> Vec<Vec<FramePacket>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid std");
    let (w, h) = (spec.frame_width as f64, spec.frame_height as f64);
    let n = spec.detections_per_camera.max(1);
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (cell_w, cell_h) = (w / cols as f64, h / rows as f64);
    let box_w = (cell_w * 0.45).min(160.0);
    let box_h = (cell_h * 0.45).min(120.0);
    let phases: Vec<Vec<f64>> = (0..spec.cameras)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..TAU)).collect())
        .collect();
    let center = spec.cameras / 2;

    (0..spec.cameras)
        .map(|cam| {
            (0..spec.frames)
                .map(|t| {
                    let mut detections = Vec::with_capacity(n);
                    for (i, phase) in phases[cam as usize].iter().enumerate().take(spec.detections_per_camera) {
                        if spec.dropout > 0.0 && rng.random_bool(spec.dropout) {
                            continue;
                        }
                        let bbox = if cam == center && i == 0 {
                            // Waits 50 frames mid-frame, closes in 30, then parks near the horizon.
                            let phase = t % 100;
                            let y = match phase {
                                0..50 => 0.55 * h,
                                50..80 => 0.55 * h + 0.45 * h * ((phase - 50) as f64 / 30.0).powi(2),
                                _ => 0.3 * h,
                            };
                            let bh = 40.0 + 0.35 * y;
                            BoundingBox::new(w / 2.0 - 0.65 * bh, y - bh, w / 2.0 + 0.65 * bh, y)
                        } else {
                            let (r, c) = (i / cols, i % cols);
                            let sway = 0.2 * cell_w * (TAU * t as f64 / 200.0 + phase).sin();
                            let cx = (c as f64 + 0.5) * cell_w + sway;
                            let cy = (r as f64 + 0.5) * cell_h;
                            BoundingBox::new(cx - box_w / 2.0, cy - box_h / 2.0, cx + box_w / 2.0, cy + box_h / 2.0)
                        };
                        let mut j = || noise.sample(&mut rng);
                        let noisy = BoundingBox::new(
                            (bbox.x_min + j()).clamp(0.0, w - 2.0),
                            (bbox.y_min + j()).clamp(0.0, h - 2.0),
                            (bbox.x_max + j()).clamp(2.0, w),
                            (bbox.y_max + j()).clamp(2.0, h),
                        );
                        if noisy.is_proper() {
                            detections.push(Detection::new(noisy, ClassId(0), 0.9));
                        }
                    }
                    FramePacket {
                        camera_id: cam,
                        frame_index: t,
                        timestamp_ms: (t as f64 * 1000.0 / spec.fps).round() as u64,
                        frame_width: spec.frame_width,
                        frame_height: spec.frame_height,
                        detections,
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub frames: u64,
    pub processed: u64,
    pub detections: u64,
    pub elapsed: Duration,
    pub fps: f64,
    pub commands: u64,
    #[serde(skip)]
    pub log_text: String,
}

/// Wall-clock composite frames per second of one pipeline run over `streams`.
pub fn throughput_bench(streams: Vec<Vec<FramePacket>>, config: &PipelineConfig) -> Result<ThroughputReport, PipelineError> {
    let detections = streams.iter().flatten().map(|p| p.detections.len() as u64).sum();
    let config = PipelineConfig {
        actuation_log: None,
        ..config.clone()
    };
    let started = Instant::now();
    let out = run_pipeline(streams, &config)?;
    let elapsed = started.elapsed();
    Ok(ThroughputReport {
        frames: out.stats.ticks,
        processed: out.stats.processed,
        detections,
        fps: out.stats.ticks as f64 / elapsed.as_secs_f64().max(1e-9),
        elapsed,
        commands: out.stats.commands,
        log_text: out.log_text(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_shape() {
        let spec = LoadSpec {
            frames: 5,
            ..LoadSpec::default()
        };
        let streams = synthetic_load(&spec, 1);
        assert_eq!(streams.len(), 3);
        for s in &streams {
            assert_eq!(s.len(), 5);
            for p in s {
                assert_eq!(p.detections.len(), 20);
                crate::detection::validate_packet(p.clone(), None).unwrap();
            }
        }
        assert_eq!(streams, synthetic_load(&spec, 1));
    }

    #[test]
    fn short_bench_runs() {
        let spec = LoadSpec {
            frames: 200,
            ..LoadSpec::default()
        };
        let report = throughput_bench(synthetic_load(&spec, 2), &PipelineConfig::default()).unwrap();
        assert_eq!(report.frames, 200);
        assert!(report.fps.is_finite() && report.fps > 0.0);
    }
}
