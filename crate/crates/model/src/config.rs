use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The saliency network alone; commands are ignored.
    Base,
    /// Command prompts injected into the frozen encoder.
    Usersal,
    /// Prompt injection plus the appearance-similarity path.
    UsersalPlus,
}

/// The single shared-weight layer applied to both feature pyramids before comparing them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsnVariant {
    Linear,
    Conv,
    VitAttention,
    SwinAttention,
}

impl TsnVariant {
    pub const ALL: [TsnVariant; 4] = [
        TsnVariant::Linear,
        TsnVariant::Conv,
        TsnVariant::VitAttention,
        TsnVariant::SwinAttention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TsnVariant::Linear => "linear",
            TsnVariant::Conv => "conv",
            TsnVariant::VitAttention => "vit_attention",
            TsnVariant::SwinAttention => "swin_attention",
        }
    }
}

/// Argument order of the appearance divergence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(target || features)`.
    #[default]
    TargetToFeatures,
    /// `KL(features || target)`.
    FeaturesToTarget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Mode,
    /// Number of pyramid levels; level `n` has stride `2^n`.
    pub levels: usize,
    pub channel_widths: Vec<usize>,
    pub tsn_variant: TsnVariant,
    /// One TSN for every level (needs equal widths) instead of one per level.
    pub tsn_shared: bool,
    pub freeze_esm: bool,
    /// Apply prompts, similarity and appearance loss at every level, or only the deepest.
    pub multi_scale: bool,
    pub appearance_loss: bool,
    pub appearance_kl: KlDirection,
    /// Width of the pooled command embedding.
    pub embed_dim: usize,
    /// Query/key width of the attention layers.
    pub attn_dim: usize,
    /// Side of the attention windows used when a level has more tokens than one window.
    pub window: usize,
    /// Window side of the shifted-window TSN.
    pub swin_window: usize,
    /// Side of the square input images.
    pub resolution: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: Mode::UsersalPlus,
            levels: 5,
            channel_widths: vec![8; 5],
            tsn_variant: TsnVariant::SwinAttention,
            tsn_shared: true,
            freeze_esm: true,
            multi_scale: true,
            appearance_loss: true,
            appearance_kl: KlDirection::default(),
            embed_dim: 16,
            attn_dim: 8,
            window: 12,
            swin_window: 6,
            resolution: usersod_core::DEFAULT_RESOLUTION,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        if self.channel_widths.len() != self.levels {
            return bad(format!(
                "{} channel widths for {} levels",
                self.channel_widths.len(),
                self.levels
            ));
        }
        if self.channel_widths.contains(&0) || self.embed_dim == 0 || self.attn_dim == 0 {
            return bad("widths and embedding sizes must be positive".into());
        }
        if self.resolution == 0 || self.resolution % (1 << self.levels) != 0 {
            return bad(format!(
                "resolution {} is not divisible by 2^{}",
                self.resolution, self.levels
            ));
        }
        if self.tsn_shared && self.channel_widths.iter().any(|&c| c != self.channel_widths[0]) {
            return bad("a shared TSN needs equal channel widths at every level".into());
        }
        if self.window == 0 || self.swin_window == 0 {
            return bad("attention windows must be positive".into());
        }
        for l in 0..self.levels {
            let side = self.level_side(l);
            for w in [self.window, self.swin_window] {
                if side > w && side % w != 0 {
                    return bad(format!("level {} side {side} is not a multiple of window {w}", l + 1));
                }
            }
        }
        Ok(())
    }

    /// Spatial side of level `l` (0-based).
    pub fn level_side(&self, l: usize) -> usize {
        self.resolution >> (l + 1)
    }

    /// 0-based levels that receive prompts, similarity and appearance loss.
    pub fn active_levels(&self) -> Vec<usize> {
        if self.multi_scale {
            (0..self.levels).collect()
        } else {
            vec![self.levels - 1]
        }
    }

    pub fn uses_prompts(&self) -> bool {
        self.mode != Mode::Base
    }

    pub fn uses_asa(&self) -> bool {
        self.mode == Mode::UsersalPlus
    }

    pub fn uses_appearance_loss(&self) -> bool {
        self.uses_asa() && self.appearance_loss
    }
}
