use rand::Rng;
use serde::{Deserialize, Serialize};
use usersod_core::{rng, BinaryMask, BoundingBox, ObjectRecord, Provenance, SceneRecord};

use super::{check_bbox, CommandGenerator, CommandRequest, Detector, Segmenter};
use crate::error::{DigError, Result};
use crate::types::DetectedObject;

/// Detector that reports the ground-truth boxes, optionally jittered or dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleDetector {
    pub seed: u64,
    /// Probability of missing an object.
    pub miss_rate: f64,
    /// Each box edge moves by a uniform integer offset in `[-jitter, jitter]`.
    pub jitter: u32,
    pub confidence: f64,
}

impl Default for OracleDetector {
    fn default() -> Self {
        OracleDetector {
            seed: 0,
            miss_rate: 0.0,
            jitter: 0,
            confidence: 1.0,
        }
    }
}

/// Shift every edge of `b` by the given offsets, clamped to the image.
pub fn jitter_box(b: &BoundingBox, offsets: [i64; 4], width: usize, height: usize) -> BoundingBox {
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64) as u32;
    let x0 = clamp(b.x_min as i64 + offsets[0], width);
    let y0 = clamp(b.y_min as i64 + offsets[1], height);
    let x1 = clamp(b.x_max as i64 + offsets[2], width).max(x0 + 1).min(width as u32);
    let y1 = clamp(b.y_max as i64 + offsets[3], height).max(y0 + 1).min(height as u32);
    BoundingBox::new(x0.min(x1 - 1), y0.min(y1 - 1), x1, y1)
}

impl Detector for OracleDetector {
    fn name(&self) -> &str {
        "oracle"
    }

    fn detect(&self, scene: &SceneRecord) -> Result<Vec<DetectedObject>> {
        let (w, h) = (scene.image.width(), scene.image.height());
        let mut out = Vec::with_capacity(scene.objects.len());
        for o in &scene.objects {
            let mut r = rng::stream(self.seed, &[rng::label_id("oracle-detector"), scene.scene_id as u64, o.object_id as u64]);
            if r.gen_bool(self.miss_rate.clamp(0.0, 1.0)) {
                continue;
            }
            let j = self.jitter as i64;
            let offsets = [0; 4].map(|_: i64| if j == 0 { 0 } else { r.gen_range(-j..=j) });
            out.push(DetectedObject {
                bbox: jitter_box(&o.bbox, offsets, w, h),
                label: o.semantic_label.clone(),
                confidence: self.confidence,
                source_detector: self.name().to_string(),
            });
        }
        Ok(out)
    }
}

/// The object whose ground-truth box overlaps `bbox` most; ties go to the smaller id.
pub fn best_matching_object<'a>(scene: &'a SceneRecord, bbox: &BoundingBox) -> Option<&'a ObjectRecord> {
    scene
        .objects
        .iter()
        .max_by(|a, b| {
            a.bbox
                .iou(bbox)
                .total_cmp(&b.bbox.iou(bbox))
                .then(b.object_id.cmp(&a.object_id))
        })
        .filter(|o| o.bbox.iou(bbox) > 0.0)
}

/// Segmenter returning the ground-truth mask of the best-matching object.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleSegmenter;

impl Segmenter for OracleSegmenter {
    fn segment(&self, scene: &SceneRecord, bbox: &BoundingBox) -> Result<BinaryMask> {
        check_bbox(scene, bbox)?;
        best_matching_object(scene, bbox)
            .map(|o| o.mask.clone())
            .ok_or_else(|| DigError::Backend {
                backend: "oracle segmenter".into(),
                reason: format!("no object overlaps {bbox:?}"),
            })
    }
}

/// Command generator that reads the scene's own commands.
///
/// The object is identified by mask overlap; its commands are those the
/// scene record assigns to it, in command order.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleCommands;

impl CommandGenerator for OracleCommands {
    fn generate(&self, request: &CommandRequest<'_>) -> Result<Vec<String>> {
        let scene = request.scene;
        let Some(object) = scene
            .objects
            .iter()
            .map(|o| (o, o.mask.iou(request.mask)))
            .filter(|(_, iou)| *iou > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.object_id.cmp(&a.0.object_id)))
            .map(|(o, _)| o)
        else {
            return Ok(Vec::new());
        };
        Ok(scene
            .commands
            .iter()
            .filter(|c| c.target_object_id == object.object_id)
            .map(|c| c.text.clone())
            .collect())
    }

    fn provenance(&self) -> Provenance {
        Provenance::SyntheticOracle
    }
}
