//! Domain types and dataset storage shared by every part of the toolkit.

pub mod dataset;
mod error;
pub mod raster;
pub mod rng;
mod scene;

pub use dataset::{load_dataset, load_scenes, serialize_dataset, write_samples};
pub use error::{CoreError, Result};
pub use raster::{BinaryMask, BoundingBox, ImageTensor, SaliencyMap, DEFAULT_RESOLUTION};
pub use scene::{
    Attribute, AttributeMap, Need, NeedCommand, ObjectRecord, Provenance, SceneRecord, TrainingSample,
};
