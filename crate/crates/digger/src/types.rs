use serde::{Deserialize, Serialize};
use usersod_core::{BinaryMask, BoundingBox, Provenance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub bbox: BoundingBox,
    pub label: String,
    pub confidence: f64,
    pub source_detector: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Accepted,
    Edited,
    Rejected,
}

impl Status {
    pub fn is_decided(self) -> bool {
        self != Status::Pending
    }

    /// Decided samples that end up in the emitted dataset.
    pub fn is_kept(self) -> bool {
        matches!(self, Status::Accepted | Status::Edited)
    }
}

/// One latent target before review.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposedSample {
    /// `{scene_id}-{index}`, unique within a queue.
    pub id: String,
    pub scene_id: u32,
    /// Position of the proposal within its scene; becomes the target object id.
    pub index: u32,
    pub detected: DetectedObject,
    #[serde(with = "png_mask")]
    pub mask: BinaryMask,
    pub commands: Vec<String>,
    pub status: Status,
    pub provenance: Provenance,
    /// Why the proposal needs a human: a failed backend or an empty generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ProposedSample {
    pub fn make_id(scene_id: u32, index: u32) -> String {
        format!("{scene_id}-{index}")
    }

    /// Complete enough to be accepted without edits.
    pub fn is_complete(&self) -> bool {
        self.note.is_none() && !self.commands.is_empty() && !self.mask.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
    Edit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionDecision {
    pub proposed_ref: String,
    pub verdict: Verdict,
    #[serde(default, with = "png_mask::optional", skip_serializing_if = "Option::is_none")]
    pub edited_mask: Option<BinaryMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_commands: Option<Vec<String>>,
    pub reviewer: String,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl CorrectionDecision {
    pub fn new(proposed_ref: impl Into<String>, verdict: Verdict, reviewer: impl Into<String>) -> Self {
        CorrectionDecision {
            proposed_ref: proposed_ref.into(),
            verdict,
            edited_mask: None,
            edited_commands: None,
            reviewer: reviewer.into(),
            timestamp: 0,
            reason: None,
        }
    }
}

pub const DEFAULT_PROMPT: &str =
    "Describe a short first-person need command that would make a user look for this {label}.";

/// Extra prompt handed to the command generator; `{label}` is replaced by the detected label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Option<Self> {
        let text = text.into();
        (!text.trim().is_empty()).then_some(PromptTemplate { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn render(&self, label: &str) -> String {
        self.text.replace("{label}", label)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            text: DEFAULT_PROMPT.to_string(),
        }
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = &'static str;

    fn try_from(text: String) -> Result<Self, Self::Error> {
        PromptTemplate::new(text).ok_or("prompt template must not be empty")
    }
}

impl From<PromptTemplate> for String {
    fn from(p: PromptTemplate) -> Self {
        p.text
    }
}

/// Masks travel through JSON as base64-encoded PNGs.
pub mod png_mask {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};
    use usersod_core::dataset::{mask_from_png_bytes, mask_to_png_bytes};
    use usersod_core::BinaryMask;

    pub fn encode(mask: &BinaryMask) -> String {
        STANDARD.encode(mask_to_png_bytes(mask))
    }

    pub fn decode(text: &str) -> Result<BinaryMask, String> {
        let bytes = STANDARD.decode(text).map_err(|e| format!("bad base64: {e}"))?;
        mask_from_png_bytes(&bytes).map_err(|e| e.to_string())
    }

    pub fn serialize<S: Serializer>(mask: &BinaryMask, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode(mask))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BinaryMask, D::Error> {
        decode(&String::deserialize(d)?).map_err(D::Error::custom)
    }

    pub mod optional {
        use super::*;

        pub fn serialize<S: Serializer>(mask: &Option<BinaryMask>, s: S) -> Result<S::Ok, S::Error> {
            match mask {
                Some(m) => s.serialize_some(&encode(m)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BinaryMask>, D::Error> {
            Option::<String>::deserialize(d)?
                .map(|t| decode(&t).map_err(D::Error::custom))
                .transpose()
        }
    }
}
