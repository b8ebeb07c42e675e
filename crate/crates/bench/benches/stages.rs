use std::hint::black_box;

use brakesense_bench::{cost_matrix, pipeline_load, tracker_frames};
use brakesense_core::pipeline::run_pipeline;
use brakesense_core::tracking::{solve_assignment, FrameStamp, KalmanFilter, Tracker, TrackerConfig};
use brakesense_core::PipelineConfig;
use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};

fn assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("assignment");
    for n in [8, 32, 128] {
        let cost = cost_matrix(n, n as u64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| {
            b.iter(|| solve_assignment(black_box(cost)))
        });
    }
    group.finish();
}

fn kalman(c: &mut Criterion) {
    let kf = KalmanFilter::default();
    let state = kf.initiate([400.0, 300.0, 0.6, 120.0]);
    c.bench_function("kalman/predict_update", |b| {
        b.iter(|| {
            let predicted = kf.predict(black_box(&state), 1);
            kf.update(&predicted, black_box([403.0, 299.0, 0.61, 121.0])).unwrap()
        })
    });
}

fn tracker(c: &mut Criterion) {
    let mut group = c.benchmark_group("tracker");
    for objects in [10, 60] {
        let frames = tracker_frames(objects, 50);
        group.throughput(Throughput::Elements(frames.len() as u64));
        group.bench_with_input(BenchmarkId::new("50_frames", objects), &frames, |b, frames| {
            b.iter(|| {
                let mut tracker = Tracker::new(TrackerConfig::default());
                for (t, dets) in frames.iter().enumerate() {
                    let stamp = FrameStamp {
                        frame_index: t as u64,
                        timestamp_ms: t as u64 * 100,
                        dt_frames: 1,
                    };
                    black_box(tracker.step(dets, stamp).len());
                }
            })
        });
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    for (name, dropout) in [("day", 0.05), ("night", 0.3)] {
        let load = pipeline_load(1000, 20, dropout);
        group.throughput(Throughput::Elements(1000));
        group.bench_function(name, |b| {
            b.iter_batched(|| load.clone(), |l| run_pipeline(l, &cfg).unwrap(), BatchSize::LargeInput)
        });
    }
    group.finish();
}

criterion_group!(benches, assignment, kalman, tracker, pipeline);
criterion_main!(benches);
