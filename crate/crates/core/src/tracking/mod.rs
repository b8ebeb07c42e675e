//! Multi-object tracking in the composite plane: Kalman prediction, gated
//! Hungarian association and the tentative/confirmed/deleted lifecycle.

mod assignment;
mod kalman;
mod tracker;

pub use assignment::{solve_assignment, Assignment, CostMatrix, GATED};
pub use kalman::{KalmanFilter, KalmanParams, KalmanState, MeasurementGate, StateCovariance, StateMean, CHI2_95_4DOF};
pub use tracker::{
    appearance_cost, cost_matrix, AssociationWeights, FrameStamp, Track, TrackStatus, Tracker,
    TrackerConfig,
};

use thiserror::Error;

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum TrackingError {
    #[error("measurement has a non-finite component")]
    NonFiniteMeasurement,
    #[error("measurement height and aspect ratio must be positive")]
    NonPositiveShape,
}
