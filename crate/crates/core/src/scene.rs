use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::raster::{BinaryMask, BoundingBox, ImageTensor};

/// The four appearance axes an object is described by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Color,
    Shape,
    Size,
    Texture,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::Color,
        Attribute::Shape,
        Attribute::Size,
        Attribute::Texture,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Color => "color",
            Attribute::Shape => "shape",
            Attribute::Size => "size",
            Attribute::Texture => "texture",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attribute {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| CoreError::invalid("attribute", format!("unknown attribute {s:?}")))
    }
}

pub type AttributeMap = BTreeMap<Attribute, String>;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectRecord {
    pub object_id: u32,
    pub bbox: BoundingBox,
    pub mask: BinaryMask,
    pub semantic_label: String,
    pub attributes: AttributeMap,
}

impl ObjectRecord {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let fail = |reason: String| {
            Err(CoreError::invalid(
                "object",
                format!("object {}: {reason}", self.object_id),
            ))
        };
        if self.semantic_label.is_empty() {
            return fail("empty semantic label".into());
        }
        if self.mask.height() != height || self.mask.width() != width {
            return fail("mask shape differs from image".into());
        }
        self.bbox.validate(width, height)?;
        for y in 0..height {
            for x in 0..width {
                if self.mask.get(y, x) && !self.bbox.contains_with_margin(y, x, 1) {
                    return fail(format!("mask pixel ({x},{y}) outside bbox {:?}", self.bbox));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SyntheticOracle,
    ExternalService,
    HumanEdited,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeedCommand {
    pub command_id: u32,
    pub text: String,
    pub target_object_id: u32,
    pub provenance: Provenance,
}

/// What a sample asks for: a user need command, or nothing at all.
///
/// `Zero` selects the conventional (command-free) path where the text input
/// is replaced by zeros.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Need {
    Command(NeedCommand),
    Zero,
}

impl Need {
    pub fn text(&self) -> Option<&str> {
        match self {
            Need::Command(c) => Some(&c.text),
            Need::Zero => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Need::Zero)
    }
}

/// One `(image, need, ground truth)` triple.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub scene_id: u32,
    pub image: Arc<ImageTensor>,
    pub need: Need,
    pub gt: BinaryMask,
}

impl TrainingSample {
    pub fn validate(&self) -> Result<()> {
        if self.gt.height() != self.image.height() || self.gt.width() != self.image.width() {
            return Err(CoreError::Scene {
                scene_id: self.scene_id,
                reason: "ground truth shape differs from image".into(),
            });
        }
        if let Need::Command(c) = &self.need {
            if c.text.trim().is_empty() {
                return Err(CoreError::Scene {
                    scene_id: self.scene_id,
                    reason: "empty command text".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub scene_id: u32,
    pub image: Arc<ImageTensor>,
    pub objects: Vec<ObjectRecord>,
    pub commands: Vec<NeedCommand>,
    pub gt_b: BinaryMask,
    pub rng_seed: u64,
}

impl SceneRecord {
    pub fn object(&self, object_id: u32) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    /// Id of the object whose mask equals `gt_b`.
    pub fn gt_b_object_id(&self) -> Option<u32> {
        self.objects
            .iter()
            .find(|o| o.mask == self.gt_b)
            .map(|o| o.object_id)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |reason: String| {
            Err(CoreError::Scene {
                scene_id: self.scene_id,
                reason,
            })
        };
        let (h, w) = (self.image.height(), self.image.width());
        if self.objects.is_empty() {
            return err("scene has no objects".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.object_id) {
                return err(format!("duplicate object id {}", o.object_id));
            }
            if let Err(e) = o.validate(h, w) {
                return err(e.to_string());
            }
        }
        if self.gt_b.height() != h || self.gt_b.width() != w {
            return err("gt_b shape differs from image".into());
        }
        if self.gt_b_object_id().is_none() {
            return err("gt_b does not equal any object's mask".into());
        }
        for c in &self.commands {
            if c.text.trim().is_empty() {
                return err(format!("command {} has empty text", c.command_id));
            }
            if self.object(c.target_object_id).is_none() {
                return err(format!(
                    "command {} targets missing object {}",
                    c.command_id, c.target_object_id
                ));
            }
        }
        Ok(())
    }

    /// Need samples in command order followed by the conventional sample.
    pub fn training_samples(&self) -> Vec<TrainingSample> {
        let mut out: Vec<TrainingSample> = self
            .commands
            .iter()
            .map(|c| TrainingSample {
                scene_id: self.scene_id,
                image: Arc::clone(&self.image),
                need: Need::Command(c.clone()),
                gt: self
                    .object(c.target_object_id)
                    .expect("validated command target")
                    .mask
                    .clone(),
            })
            .collect();
        out.push(TrainingSample {
            scene_id: self.scene_id,
            image: Arc::clone(&self.image),
            need: Need::Zero,
            gt: self.gt_b.clone(),
        });
        out
    }
}
