//! Multi-object tracking: Kalman filtering, gated assignment, track
//! lifecycle and CLEAR-MOT evaluation.

pub mod assignment;
pub mod evaluation;
pub mod kalman;
pub mod tracker;

pub use assignment::{assignment_cost, hungarian_assign};
pub use evaluation::{evaluate_tracking, hypotheses_from_events, hypotheses_from_records, LabeledBox, TrackingMetrics};
pub use kalman::{kalman_predict, kalman_update, mahalanobis_sq, KalmanModel, TrackState};
pub use tracker::{
    cosine_distance, fused_cost, run_tracker, AssociationMode, Detection, FrameEvents, NoiseConfig,
    Track, TrackRecord, TrackStatus, Tracker, TrackerConfig,
};
