use usersod_core::SceneRecord;

use crate::backends::Detector;
use crate::error::{DigError, Result};
use crate::types::DetectedObject;

/// Boxes of the same label overlapping more than this are one object.
pub const MERGE_IOU: f64 = 0.5;

/// Merge duplicate detections and sort by confidence, highest first.
///
/// Of two boxes with equal label and IoU above [`MERGE_IOU`], the more confident
/// one survives; equal confidences keep input order.
pub fn dedupe(detections: Vec<DetectedObject>) -> Vec<DetectedObject> {
    let mut sorted = detections;
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<DetectedObject> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if !kept
            .iter()
            .any(|k| k.label == d.label && k.bbox.iou(&d.bbox) > MERGE_IOU)
        {
            kept.push(d);
        }
    }
    kept
}

/// Run every detector and merge their outputs.
///
/// A failing detector is logged and skipped; only when all of them fail is the scene an error.
pub fn detect_objects(scene: &SceneRecord, detectors: &[Box<dyn Detector>]) -> Result<Vec<DetectedObject>> {
    if detectors.is_empty() {
        return Err(DigError::NoDetectors);
    }
    let mut all = Vec::new();
    let mut failures = 0;
    for d in detectors {
        match d.detect(scene) {
            Ok(found) => {
                let (w, h) = (scene.image.width(), scene.image.height());
                for o in found {
                    if (0.0..=1.0).contains(&o.confidence) && o.bbox.validate(w, h).is_ok() {
                        all.push(o);
                    } else {
                        log::warn!("scene {}: dropped malformed detection from {}", scene.scene_id, d.name());
                    }
                }
            }
            Err(e) => {
                log::warn!("scene {}: detector {} skipped: {e}", scene.scene_id, d.name());
                failures += 1;
            }
        }
    }
    if failures == detectors.len() {
        return Err(DigError::AllDetectorsFailed {
            scene_id: scene.scene_id,
        });
    }
    Ok(dedupe(all))
}
