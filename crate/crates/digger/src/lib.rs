//! Dig latent targets out of images and turn them into need-conditioned samples.
//!
//! Detectors propose boxes, a box-prompted segmenter turns them into masks,
//! a command generator describes each target, and a correction step decides
//! what is kept.

pub mod backends;
mod detect;
mod error;
pub mod pipeline;
pub mod queue;
mod types;

pub use backends::{Backends, HttpConfig, OracleDetector};
pub use detect::{dedupe, detect_objects, MERGE_IOU};
pub use error::{DigError, Result};
pub use pipeline::{run_dig, CorrectionMode, DigReport};
pub use queue::{replay, AuditEntry, CorrectionQueue, Page, QueueError, QueueStats};
pub use types::{
    png_mask, CorrectionDecision, DetectedObject, PromptTemplate, ProposedSample, Status, Verdict, DEFAULT_PROMPT,
};
