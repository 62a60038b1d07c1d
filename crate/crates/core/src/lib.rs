//! Offline expressway traffic analytics.
//!
//! Per-frame vehicle detections are tracked into trajectories, converted to
//! flow / density / speed series, cleaned and windowed, and fed to recurrent
//! classifiers that raise congestion warnings ahead of sustained congestion.

pub mod congestion;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod neural;
pub mod pipeline;
pub mod preprocess;
pub mod scenario;
pub mod tracking;

pub use error::{Error, Result};
