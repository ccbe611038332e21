//! Gaze analysis for two-alternative forced choice (2AFC) experiments.
//!
//! The crate takes raw wearable eye-tracker gaze, per-frame avatar keypoints
//! and trial logs, and carries them through:
//!
//! - [`ingest`]: CSV parsing, likelihood filtering and 60 Hz / 24 Hz alignment
//! - [`kinematics`]: pixel to visual angle, block-wise post-calibration,
//!   gaze speed, saccade detection and trajectory segmentation
//! - [`features`]: the six per-trial gaze features and binary outcomes
//! - [`inference`]: Bayesian logistic regression sampled with NUTS
//! - [`information`]: mutual information between gaze and outcomes
//! - [`evidence`]: bridge-sampled marginal likelihood and leave-one-feature-out
//!   importance
//! - [`cascade`]: the gaze-cascade posterior test
//! - [`synth`]: synthetic sessions with known ground truth
//! - [`pipeline`]: the end-to-end run and report emission

pub mod cascade;
pub mod evidence;
pub mod features;
pub mod inference;
pub mod information;
pub mod ingest;
pub mod kinematics;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod synth;

mod par;

pub use ingest::{GazeSample, KeypointFrame, Session, Side, TrialRecord};
pub use kinematics::{AnglePoint, CameraGeometry, GazeSegment, PixelPoint};
