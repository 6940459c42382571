//! Need-conditioned salient object detection networks.
//!
//! A frozen saliency encoder-decoder receives per-level command prompts; the
//! similarity mode adds a Siamese comparison against a frozen copy of the
//! encoder and fuses the gated image features back with cross-attention.
//! [`losses`] holds the training objective.

pub mod checkpoint;
mod config;
mod error;
pub mod losses;
mod model;
mod vocab;

pub use config::{KlDirection, Mode, ModelConfig, TsnVariant};
pub use error::{ModelError, Result};
pub use losses::{appearance_loss_level, appearance_loss_level_dir, mse_loss, total_loss, LossReport, LossTerms};
pub use model::{image_tensor, mask_tensor, Forward, PromptStack, UserSal, ESM_PREFIX, SME_PREFIX};
pub use vocab::{tokenize, Vocabulary, UNKNOWN_TOKEN};
