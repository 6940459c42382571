//! Synthetic scenes of coloured shapes on a noisy gray background.
//!
//! Every scene carries exact per-object masks and attributes, a conventional
//! saliency target, and templated need commands whose targets are resolved
//! from the command text alone.

pub mod attributes;
mod generator;
mod needs;
pub mod render;

pub use attributes::{Appearance, Color, Shape, Size, Texture};
pub use generator::{
    conventional_gt, generate_dataset, generate_scene, object_contrast, GeneratorConfig,
    BACKGROUND_GRAY, BACKGROUND_NOISE, MAX_PLACEMENT_ATTEMPTS,
};
pub use needs::{
    attribute_distance, coarse_command, fine_command, make_commands, near_miss_command,
    parse_command, resolve_need,
};
