//! Pedestrian trajectory labeling pipeline.
//!
//! Pixel-space tracklets from several calibrated, synchronized cameras are
//! lifted to metric ground-plane trajectories, corrected by a human through a
//! replayable edit log, and summarized with dataset statistics and
//! prediction-error metrics.

pub mod analytics;
pub mod editops;
pub mod model;
pub mod geometry;
pub mod synth;
pub mod store;
pub mod tracking;
