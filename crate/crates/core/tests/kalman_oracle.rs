mod common;

use brakesense_core::tracking::{KalmanFilter, KalmanParams};
use common::{max_abs_diff, noiseless, prediction_error, TextbookKalman};
use proptest::prelude::*;

#[test]
fn noiseless_constant_velocity_is_tracked_exactly() {
    let worst = prediction_error(&KalmanFilter::new(noiseless()), 50, 5);
    assert!(worst < 1e-6, "post burn-in prediction error {worst}");
}

#[test]
fn default_noise_converges_on_constant_velocity() {
    let kf = KalmanFilter::default();
    let early = prediction_error(&kf, 20, 10);
    let late = prediction_error(&kf, 50, 40);
    assert!(late < early && late < 0.05, "early {early}, late {late}");
}

#[test]
fn generic_step_matches_textbook_filter() {
    let kf = KalmanFilter::default();
    let z0 = [50.0, 80.0, 0.5, 100.0];
    let mut ours = kf.initiate(z0);
    let mut reference = TextbookKalman::new(KalmanParams::default(), z0);
    let measurements = [
        [53.0, 79.0, 0.52, 101.0],
        [57.5, 77.0, 0.49, 103.0],
        [60.0, 76.5, 0.5, 104.5],
        [66.0, 74.0, 0.51, 107.0],
    ];
    for z in measurements {
        ours = kf.predict(&ours, 1);
        reference.predict();
        ours = kf.update(&ours, z).unwrap();
        reference.update(z);
        let dm = max_abs_diff(ours.mean.iter().copied(), reference.x.iter().copied());
        let dp = max_abs_diff(ours.covariance.iter().copied(), reference.p.iter().flatten().copied());
        assert!(dm < 1e-9 && dp < 1e-9, "mean diff {dm}, covariance diff {dp}");
    }
}

proptest! {
    #[test]
    fn covariance_stays_symmetric_psd(
        zs in prop::collection::vec((0.0f64..1000.0, 0.0f64..1000.0, 0.2f64..3.0, 10.0f64..500.0), 1..30)
    ) {
        let kf = KalmanFilter::default();
        let (u, v, a, h) = zs[0];
        let mut s = kf.initiate([u, v, a, h]);
        for &(u, v, a, h) in &zs[1..] {
            s = kf.predict(&s, 1);
            s = kf.update(&s, [u, v, a, h]).unwrap();
            prop_assert!(s.asymmetry() == 0.0);
            let eig = s.covariance.symmetric_eigenvalues();
            let scale = s.covariance.abs().max().max(1.0);
            prop_assert!(eig.iter().all(|e| *e >= -1e-9 * scale), "{eig:?}");
        }
    }
}
