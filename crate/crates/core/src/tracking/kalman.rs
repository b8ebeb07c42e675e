//! Constant-velocity Kalman filter over `(u, v, aspect, h)` and their rates.
//!
//! Noise standard deviations scale with the current box height, so the filter
//! behaves the same for near (large) and far (small) objects.

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use serde::{Deserialize, Serialize};

use super::TrackingError;
use crate::detection::BoundingBox;

pub type StateMean = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;
type Observation = SMatrix<f64, 4, 8>;

/// Squared Mahalanobis gate, 0.95 quantile of chi-square with 4 degrees of freedom.
pub const CHI2_95_4DOF: f64 = 9.4877;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateMean,
    pub covariance: StateCovariance,
}

impl KalmanState {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::from_xyah(self.mean[0], self.mean[1], self.mean[2], self.mean[3])
    }

    pub fn asymmetry(&self) -> f64 {
        (self.covariance - self.covariance.transpose()).abs().max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KalmanParams {
    /// Process noise std of position components, as a fraction of box height.
    pub std_weight_position: f64,
    /// Process noise std of velocity components, as a fraction of box height.
    pub std_weight_velocity: f64,
    /// Measurement noise std of position components, as a fraction of box height.
    pub std_weight_measurement: f64,
    pub aspect_process_std: f64,
    pub aspect_velocity_process_std: f64,
    pub aspect_measurement_std: f64,
    /// Initial position std as a fraction of box height.
    pub init_position_std_weight: f64,
    /// Initial velocity std as a fraction of box height.
    pub init_velocity_std_weight: f64,
    pub init_aspect_std: f64,
    pub init_aspect_velocity_std: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
            std_weight_measurement: 1.0 / 20.0,
            aspect_process_std: 1e-2,
            aspect_velocity_process_std: 1e-5,
            aspect_measurement_std: 1e-1,
            init_position_std_weight: 2.0 / 20.0,
            init_velocity_std_weight: 10.0 / 160.0,
            init_aspect_std: 1e-2,
            init_aspect_velocity_std: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct KalmanFilter {
    pub params: KalmanParams,
}

fn observation() -> Observation {
    Observation::identity()
}

impl KalmanFilter {
    pub fn new(params: KalmanParams) -> Self {
        Self { params }
    }

    /// New track state from an unassociated measurement, with zero velocity.
    pub fn initiate(&self, measurement: [f64; 4]) -> KalmanState {
        let p = &self.params;
        let h = measurement[3];
        let pos = p.init_position_std_weight * h;
        let vel = p.init_velocity_std_weight * h;
        let std = [pos, pos, p.init_aspect_std, pos, vel, vel, p.init_aspect_velocity_std, vel];
        let mut mean = StateMean::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&Vector4::from(measurement));
        KalmanState {
            mean,
            covariance: StateCovariance::from_diagonal(&SVector::from(std.map(|s| s * s))),
        }
    }

    fn process_noise(&self, h: f64) -> StateCovariance {
        let p = &self.params;
        let (sp, sv) = (p.std_weight_position * h, p.std_weight_velocity * h);
        let std = [sp, sp, p.aspect_process_std, sp, sv, sv, p.aspect_velocity_process_std, sv];
        StateCovariance::from_diagonal(&SVector::from(std.map(|s| s * s)))
    }

    fn measurement_noise(&self, h: f64) -> Matrix4<f64> {
        let p = &self.params;
        let sm = p.std_weight_measurement * h;
        let std = [sm, sm, p.aspect_measurement_std, sm];
        Matrix4::from_diagonal(&Vector4::from(std.map(|s| s * s)))
    }

    /// Propagates `dt_frames` unit steps (a zero step count is treated as one).
    pub fn predict(&self, state: &KalmanState, dt_frames: u32) -> KalmanState {
        let mut transition = StateCovariance::identity();
        for i in 0..4 {
            transition[(i, i + 4)] = 1.0;
        }
        let mut out = state.clone();
        for _ in 0..dt_frames.max(1) {
            let q = self.process_noise(out.mean[3]);
            out.mean = transition * out.mean;
            out.covariance = transition * out.covariance * transition.transpose() + q;
            symmetrize(&mut out.covariance);
        }
        out
    }

    /// Predicted measurement mean and innovation covariance.
    pub fn project(&self, state: &KalmanState) -> (Vector4<f64>, Matrix4<f64>) {
        let obs = observation();
        let mean = obs * state.mean;
        let mut cov = obs * state.covariance * obs.transpose() + self.measurement_noise(state.mean[3]);
        symmetrize4(&mut cov);
        (mean, cov)
    }

    pub fn update(&self, state: &KalmanState, measurement: [f64; 4]) -> Result<KalmanState, TrackingError> {
        check_measurement(&measurement)?;
        let (projected, innovation_cov) = self.project(state);
        let obs = observation();
        let s_inv = invert_psd(&innovation_cov);
        let gain = state.covariance * obs.transpose() * s_inv;
        let innovation = Vector4::from(measurement) - projected;
        let mean = state.mean + gain * innovation;
        let mut covariance = state.covariance - gain * innovation_cov * gain.transpose();
        symmetrize(&mut covariance);
        Ok(KalmanState { mean, covariance })
    }

    /// Squared Mahalanobis distance between the projected state and `measurement`.
    pub fn gating_distance(&self, state: &KalmanState, measurement: [f64; 4]) -> f64 {
        self.gate(state).distance(measurement)
    }

    /// Projection and inverse innovation covariance, reusable across many measurements.
    pub fn gate(&self, state: &KalmanState) -> MeasurementGate {
        let (projected, cov) = self.project(state);
        MeasurementGate {
            projected,
            inverse: invert_psd(&cov),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementGate {
    projected: Vector4<f64>,
    inverse: Matrix4<f64>,
}

impl MeasurementGate {
    /// Squared Mahalanobis distance to `measurement`.
    pub fn distance(&self, measurement: [f64; 4]) -> f64 {
        let d = Vector4::from(measurement) - self.projected;
        d.dot(&(self.inverse * d))
    }
}

fn check_measurement(m: &[f64; 4]) -> Result<(), TrackingError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(TrackingError::NonFiniteMeasurement);
    }
    if m[3] <= 0.0 || m[2] <= 0.0 {
        return Err(TrackingError::NonPositiveShape);
    }
    Ok(())
}

/// Inverse of a symmetric positive semi-definite 4x4 matrix; falls back to the
/// pseudo-inverse when it is singular (zero-noise configurations).
fn invert_psd(m: &Matrix4<f64>) -> Matrix4<f64> {
    if let Some(chol) = m.cholesky() {
        return chol.inverse();
    }
    m.pseudo_inverse(1e-12).unwrap_or_else(|_| Matrix4::zeros())
}

fn symmetrize(m: &mut StateCovariance) {
    *m = (*m + m.transpose()) * 0.5;
}

fn symmetrize4(m: &mut Matrix4<f64>) {
    *m = (*m + m.transpose()) * 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(u: f64, du: f64) -> KalmanState {
        let kf = KalmanFilter::default();
        let mut s = kf.initiate([u, 50.0, 0.5, 40.0]);
        s.mean[4] = du;
        s
    }

    #[test]
    fn zero_velocity_predict_keeps_mean_grows_covariance() {
        let kf = KalmanFilter::default();
        let s = state_with(100.0, 0.0);
        let p = kf.predict(&s, 1);
        assert_eq!(p.mean, s.mean);
        assert!(p.covariance.trace() > s.covariance.trace());
    }

    #[test]
    fn linear_propagation() {
        let kf = KalmanFilter::default();
        assert_eq!(kf.predict(&state_with(100.0, 5.0), 1).mean[0], 105.0);
        let p = kf.predict(&state_with(100.0, 5.0), 3);
        assert_eq!(p.mean[0], 100.0 + 5.0 * 3.0);
        assert_eq!(p.mean[4], 5.0);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let kf = KalmanFilter::default();
        let s = kf.predict(&state_with(100.0, 3.0), 1);
        let m = [s.mean[0], s.mean[1], s.mean[2], s.mean[3]];
        let post = kf.update(&s, m).unwrap();
        assert!((post.mean - s.mean).abs().max() < 1e-12);
    }

    #[test]
    fn noiseless_measurement_is_adopted() {
        let kf = KalmanFilter::new(KalmanParams {
            std_weight_measurement: 0.0,
            aspect_measurement_std: 0.0,
            ..KalmanParams::default()
        });
        let s = kf.predict(&state_with(100.0, 3.0), 1);
        let z = [110.0, 47.0, 0.55, 42.0];
        let post = kf.update(&s, z).unwrap();
        for (m, zi) in post.mean.iter().zip(z) {
            assert!((m - zi).abs() < 1e-6);
        }
    }

    #[test]
    fn observed_block_trace_does_not_increase() {
        let kf = KalmanFilter::default();
        let s = kf.predict(&state_with(100.0, 3.0), 2);
        let post = kf.update(&s, [104.0, 51.0, 0.5, 41.0]).unwrap();
        let tr = |c: &StateCovariance| (0..4).map(|i| c[(i, i)]).sum::<f64>();
        assert!(tr(&post.covariance) <= tr(&s.covariance));
        assert!(post.asymmetry() < 1e-9);
    }

    #[test]
    fn rejects_bad_measurements() {
        let kf = KalmanFilter::default();
        let s = state_with(1.0, 0.0);
        assert_eq!(kf.update(&s, [f64::NAN, 0.0, 1.0, 1.0]), Err(TrackingError::NonFiniteMeasurement));
        assert_eq!(kf.update(&s, [0.0, 0.0, 1.0, 0.0]), Err(TrackingError::NonPositiveShape));
    }

    #[test]
    fn gate_rejects_far_measurement() {
        let kf = KalmanFilter::default();
        let s = kf.predict(&state_with(100.0, 0.0), 1);
        assert!(kf.gating_distance(&s, [100.5, 50.0, 0.5, 40.0]) < CHI2_95_4DOF);
        assert!(kf.gating_distance(&s, [160.0, 50.0, 0.5, 40.0]) > CHI2_95_4DOF);
    }
}
