//! Independent reference implementations shared by the integration tests and
//! the acceptance runner.

#![allow(dead_code)]

use brakesense_core::detection::{BoundingBox, ClassId, Detection};
use brakesense_core::fusion::FusedDetection;
use brakesense_core::tracking::{FrameStamp, KalmanFilter, KalmanParams, Track, Tracker, TrackerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Every injective map from the smaller side into the larger one; returns the minimum sum.
pub fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    type Lookup<'a> = Box<dyn Fn(usize, usize) -> f64 + 'a>;
    let (small, large, at): (usize, usize, Lookup) = if rows <= cols {
        (rows, cols, Box::new(|s, l| cost[s][l]))
    } else {
        (cols, rows, Box::new(|s, l| cost[l][s]))
    };
    fn go(i: usize, small: usize, large: usize, used: &mut Vec<bool>, acc: f64, at: &dyn Fn(usize, usize) -> f64, best: &mut f64) {
        if i == small {
            *best = best.min(acc);
            return;
        }
        for l in 0..large {
            if !used[l] {
                used[l] = true;
                go(i + 1, small, large, used, acc + at(i, l), at, best);
                used[l] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, small, large, &mut vec![false; large], 0.0, at.as_ref(), &mut best);
    best
}

/// Partial matchings over finite entries only: most pairs first, then least cost.
pub fn brute_force_gated(cost: &[Vec<f64>]) -> (usize, f64) {
    let cols = cost.first().map_or(0, Vec::len);
    fn go(i: usize, cost: &[Vec<f64>], used: &mut Vec<bool>, n: usize, acc: f64, best: &mut (usize, f64)) {
        if i == cost.len() {
            if n > best.0 || (n == best.0 && acc < best.1) {
                *best = (n, acc);
            }
            return;
        }
        go(i + 1, cost, used, n, acc, best);
        for j in 0..used.len() {
            if !used[j] && cost[i][j].is_finite() {
                used[j] = true;
                go(i + 1, cost, used, n + 1, acc + cost[i][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0.0);
    go(0, cost, &mut vec![false; cols], 0, 0.0, &mut best);
    best
}

pub fn random_matrix(rng: &mut ChaCha8Rng, max_dim: usize) -> Vec<Vec<f64>> {
    let rows = rng.random_range(1..=max_dim);
    let cols = rng.random_range(1..=max_dim);
    let integer = rng.random_bool(0.3);
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    if integer {
                        rng.random_range(0..5) as f64
                    } else {
                        rng.random_range(0.0..100.0)
                    }
                })
                .collect()
        })
        .collect()
}

type Mat = Vec<Vec<f64>>;

fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

fn mul(a: &Mat, b: &Mat) -> Mat {
    let mut out = zeros(a.len(), b[0].len());
    for i in 0..a.len() {
        for k in 0..b.len() {
            for j in 0..b[0].len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| (0..a.len()).map(|i| a[i][j]).collect()).collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn sub(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect()
}

fn identity(n: usize) -> Mat {
    let mut m = zeros(n, n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn diag(v: &[f64]) -> Mat {
    let mut m = zeros(v.len(), v.len());
    for (i, x) in v.iter().enumerate() {
        m[i][i] = *x;
    }
    m
}

/// Gauss-Jordan inverse with partial pivoting.
fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a.iter().zip(identity(n)).map(|(r, e)| [r.clone(), e].concat()).collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        for v in &mut m[col] {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                for (v, pv) in m[r].iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Plain-array linear Kalman filter over `(u, v, a, h, du, dv, da, dh)` with
/// textbook update `P = (I - K H) P`.
pub struct TextbookKalman {
    pub params: KalmanParams,
    pub x: Vec<f64>,
    pub p: Mat,
}

impl TextbookKalman {
    pub fn new(params: KalmanParams, z: [f64; 4]) -> Self {
        let h = z[3];
        let pos = params.init_position_std_weight * h;
        let vel = params.init_velocity_std_weight * h;
        let std = [pos, pos, params.init_aspect_std, pos, vel, vel, params.init_aspect_velocity_std, vel];
        let mut x = z.to_vec();
        x.extend([0.0; 4]);
        Self {
            params,
            x,
            p: diag(&std.map(|s| s * s)),
        }
    }

    fn transition() -> Mat {
        let mut f = identity(8);
        for i in 0..4 {
            f[i][i + 4] = 1.0;
        }
        f
    }

    pub fn predict(&mut self) {
        let k = &self.params;
        let h = self.x[3];
        let (sp, sv) = (k.std_weight_position * h, k.std_weight_velocity * h);
        let q = diag(&[sp, sp, k.aspect_process_std, sp, sv, sv, k.aspect_velocity_process_std, sv].map(|s| s * s));
        let f = Self::transition();
        let x = mul(&f, &self.x.iter().map(|v| vec![*v]).collect());
        self.x = x.into_iter().map(|r| r[0]).collect();
        self.p = add(&mul(&mul(&f, &self.p), &transpose(&f)), &q);
    }

    pub fn update(&mut self, z: [f64; 4]) {
        let k = &self.params;
        let sm = k.std_weight_measurement * self.x[3];
        let r = diag(&[sm, sm, k.aspect_measurement_std, sm].map(|s| s * s));
        let mut hm = zeros(4, 8);
        for (i, row) in hm.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let s = add(&mul(&mul(&hm, &self.p), &transpose(&hm)), &r);
        let gain = mul(&mul(&self.p, &transpose(&hm)), &inverse(&s));
        let y: Vec<f64> = (0..4).map(|i| z[i] - self.x[i]).collect();
        for (x, g) in self.x.iter_mut().zip(&gain) {
            *x += g.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        }
        self.p = mul(&sub(&identity(8), &mul(&gain, &hm)), &self.p);
    }
}

pub fn cv_truth(t: f64) -> [f64; 4] {
    [300.0 + 4.0 * t, 200.0 - 1.5 * t, 0.6, 120.0 + 0.5 * t]
}

/// Zero process and measurement noise; only the initial state is uncertain.
pub fn noiseless() -> KalmanParams {
    KalmanParams {
        std_weight_position: 0.0,
        std_weight_velocity: 0.0,
        std_weight_measurement: 0.0,
        aspect_process_std: 0.0,
        aspect_velocity_process_std: 0.0,
        aspect_measurement_std: 0.0,
        ..KalmanParams::default()
    }
}

/// Worst one-step prediction error over steps `burn_in+1..=steps`.
pub fn prediction_error(kf: &KalmanFilter, steps: u32, burn_in: u32) -> f64 {
    let mut state = kf.initiate(cv_truth(0.0));
    let mut worst = 0.0f64;
    for t in 1..=steps {
        state = kf.predict(&state, 1);
        let z = cv_truth(t as f64);
        if t > burn_in {
            worst = worst.max(max_abs_diff(state.mean.iter().take(4).copied(), z));
        }
        state = kf.update(&state, z).unwrap();
    }
    worst
}

pub fn max_abs_diff(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn object_box(cx: f64, y_bottom: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(cx - w / 2.0, y_bottom - h, cx + w / 2.0, y_bottom)
}

fn det(b: BoundingBox) -> FusedDetection {
    FusedDetection {
        detection: Detection::new(b, ClassId(0), 0.9),
        camera_id: 1,
    }
}

fn id_near(tracks: &[Track], b: &BoundingBox) -> Option<u64> {
    tracks
        .iter()
        .filter(|t| t.is_confirmed())
        .map(|t| (t.track_id, t.bbox().iou(b)))
        .filter(|(_, iou)| *iou >= 0.3)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(id, _)| id)
}

/// Two objects cross paths; the rear one is hidden for three frames at the
/// crossing. True when both keep their original track ids to the end.
pub fn crossing_trial(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.5).unwrap();
    let speed = rng.random_range(8.0..12.0);
    let frames = 50u64;
    let cross = 25.0;
    let occluded = 24..=26u64;
    let mut tracker = Tracker::new(TrackerConfig::default());
    let mut first: Option<(u64, u64)> = None;
    let mut last = None;
    for t in 0..frames {
        let dx = speed * (t as f64 - cross);
        let a = object_box(1900.0 + dx, 500.0, 60.0, 120.0);
        let b = object_box(1900.0 - dx, 520.0, 66.0, 130.0);
        let mut jitter = |bb: BoundingBox| {
            let mut s = || noise.sample(&mut rng);
            BoundingBox::new(bb.x_min + s(), bb.y_min + s(), bb.x_max + s(), bb.y_max + s())
        };
        let mut dets = vec![det(jitter(b))];
        if !occluded.contains(&t) {
            dets.push(det(jitter(a)));
        }
        if rng.random_bool(0.5) {
            dets.reverse();
        }
        let stamp = FrameStamp {
            frame_index: t,
            timestamp_ms: t * 100,
            dt_frames: 1,
        };
        let tracks = tracker.step(&dets, stamp);
        let ids = id_near(tracks, &a).zip(id_near(tracks, &b));
        if t == 5 {
            first = ids;
        }
        if t == frames - 1 {
            last = ids;
        }
    }
    matches!((first, last), (Some(f), Some(l)) if f == l && f.0 != f.1)
}
