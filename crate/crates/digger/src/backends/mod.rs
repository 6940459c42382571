//! Pluggable detector, segmenter and command-generator backends.

mod http;
mod oracle;

pub use http::{HttpBackend, HttpConfig};
pub use oracle::{OracleCommands, OracleDetector, OracleSegmenter};

use usersod_core::{BinaryMask, BoundingBox, ImageTensor, Provenance, SceneRecord};

use crate::error::Result;
use crate::types::DetectedObject;

pub trait Detector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, scene: &SceneRecord) -> Result<Vec<DetectedObject>>;
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, scene: &SceneRecord, bbox: &BoundingBox) -> Result<BinaryMask>;
}

/// Input of one command-generation call.
pub struct CommandRequest<'a> {
    pub scene: &'a SceneRecord,
    /// The rendered extra prompt.
    pub prompt: &'a str,
    pub label: &'a str,
    /// The image with everything outside `mask` set to zero.
    pub appearance: &'a ImageTensor,
    pub mask: &'a BinaryMask,
}

pub trait CommandGenerator: Send + Sync {
    fn generate(&self, request: &CommandRequest<'_>) -> Result<Vec<String>>;
    /// Provenance recorded on commands this backend produced.
    fn provenance(&self) -> Provenance;
}

/// Segments smaller than this on either side are rejected.
pub const MIN_BBOX_SIDE: u32 = 2;

pub(crate) fn check_bbox(scene: &SceneRecord, bbox: &BoundingBox) -> Result<()> {
    if bbox.width() < MIN_BBOX_SIDE || bbox.height() < MIN_BBOX_SIDE {
        return Err(crate::error::DigError::BboxTooSmall {
            width: bbox.width(),
            height: bbox.height(),
        });
    }
    bbox.validate(scene.image.width(), scene.image.height())?;
    Ok(())
}

/// Every backend a dig run uses.
pub struct Backends {
    pub detectors: Vec<Box<dyn Detector>>,
    pub segmenter: Box<dyn Segmenter>,
    pub commands: Box<dyn CommandGenerator>,
}

impl Backends {
    /// Ground-truth backends reading the scene records.
    pub fn oracle(detector: OracleDetector) -> Self {
        Backends {
            detectors: vec![Box::new(detector)],
            segmenter: Box::new(OracleSegmenter),
            commands: Box::new(OracleCommands),
        }
    }

    /// All three stages served by one HTTP endpoint.
    pub fn http(config: HttpConfig) -> Result<Self> {
        Ok(Backends {
            detectors: vec![Box::new(HttpBackend::new(config.clone())?)],
            segmenter: Box::new(HttpBackend::new(config.clone())?),
            commands: Box::new(HttpBackend::new(config)?),
        })
    }
}
