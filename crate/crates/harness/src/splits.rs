//! Scene sets used by the ablation.

use serde::{Deserialize, Serialize};
use usersod_core::{Need, SceneRecord, TrainingSample};
use usersod_synth::{generate_dataset, parse_command, GeneratorConfig};

use crate::error::Result;

/// Twin-pair scenes split into disjoint training and test sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_scenes: u32,
    pub test_scenes: u32,
    pub generator: GeneratorConfig,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_scenes: 2000,
            test_scenes: 300,
            generator: GeneratorConfig {
                twin_pair: true,
                ..GeneratorConfig::default()
            },
        }
    }
}

pub struct FineGrainedSplit {
    pub train: Vec<SceneRecord>,
    pub test: Vec<SceneRecord>,
}

/// Generate both sets. Test scenes come from a different seed so the sets never share a scene.
pub fn fine_grained_split(config: &SplitConfig) -> Result<FineGrainedSplit> {
    let base = GeneratorConfig {
        twin_pair: true,
        ..config.generator.clone()
    };
    let train = generate_dataset(&GeneratorConfig {
        num_scenes: config.train_scenes,
        ..base.clone()
    })?;
    let test = generate_dataset(&GeneratorConfig {
        seed: base.seed ^ 0x7e57_5eed,
        num_scenes: config.test_scenes,
        ..base
    })?;
    Ok(FineGrainedSplit { train, test })
}

/// Every need and conventional sample of the scenes.
pub fn all_samples(scenes: &[SceneRecord]) -> Vec<TrainingSample> {
    scenes.iter().flat_map(|s| s.training_samples()).collect()
}

/// Full-attribute commands that pick out one of the two twins.
///
/// A command-blind predictor cannot tell the twins apart, which is what these samples probe.
pub fn twin_need_samples(scenes: &[SceneRecord]) -> Vec<TrainingSample> {
    scenes
        .iter()
        .flat_map(|s| s.training_samples())
        .filter(|t| match &t.need {
            Need::Command(c) => c.target_object_id < 2 && parse_command(&c.text).is_some_and(|a| a.len() == 3),
            Need::Zero => false,
        })
        .collect()
}

pub fn conventional_test_samples(scenes: &[SceneRecord]) -> Vec<TrainingSample> {
    crate::train::conventional_samples(scenes)
}
