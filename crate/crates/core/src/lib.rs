//! Point-supervised temporal action localization with pseudo-label
//! self-training.
//!
//! The pipeline trains a base model from single-snippet point annotations,
//! turns its proposals into one refined interval per point, samples those
//! intervals onto a temporal pyramid, retrains with the extended losses and
//! evaluates detections by mAP over tIoU thresholds.

pub mod backbone;
pub mod config;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod pseudolabel;
pub mod selfcheck;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    derive_video_labels, validate_dataset, ClassId, GtInterval, Interval, PointAnnotation,
    Proposal, PseudoLabel, Pyramid, ScoreSequence, VideoLabel, VideoRecord, Violation,
};
