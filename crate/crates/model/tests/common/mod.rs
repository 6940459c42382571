#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use usersod_core::{BinaryMask, ImageTensor, Need, NeedCommand, Provenance};
use usersod_model::{Mode, ModelConfig, TsnVariant, UserSal, Vocabulary};
use usersod_tensor::Real;

pub const TEXTS: [&str; 4] = [
    "I want to find the red circle.",
    "I want to find the blue circle.",
    "I want to find a star.",
    "I want to find the green small square.",
];

pub fn vocab() -> Vocabulary {
    Vocabulary::build(TEXTS)
}

pub fn need(text: &str) -> Need {
    Need::Command(NeedCommand {
        command_id: 0,
        text: text.into(),
        target_object_id: 0,
        provenance: Provenance::SyntheticOracle,
    })
}

/// Three levels on 16x16 inputs; small enough for exhaustive gradient checks.
pub fn tiny(mode: Mode, tsn: TsnVariant) -> ModelConfig {
    ModelConfig {
        mode,
        levels: 3,
        channel_widths: vec![4; 3],
        tsn_variant: tsn,
        embed_dim: 4,
        attn_dim: 4,
        window: 4,
        swin_window: 2,
        resolution: 16,
        ..ModelConfig::default()
    }
}

pub fn small(mode: Mode) -> ModelConfig {
    ModelConfig {
        mode,
        resolution: 32,
        levels: 3,
        channel_widths: vec![6; 3],
        window: 8,
        swin_window: 4,
        ..ModelConfig::default()
    }
}

pub fn model<T: Real>(cfg: ModelConfig, seed: u64) -> UserSal<T> {
    UserSal::new(cfg, vocab(), seed).unwrap()
}

pub fn random_image(size: usize, seed: u64) -> ImageTensor {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let rgb: Vec<u8> = (0..3 * size * size).map(|_| r.gen()).collect();
    ImageTensor::from_rgb8(size, size, &rgb).unwrap()
}

pub fn random_mask(size: usize, seed: u64) -> BinaryMask {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let x0 = r.gen_range(0..size / 2);
    let y0 = r.gen_range(0..size / 2);
    let mut m = BinaryMask::zeros(size, size);
    for y in y0..y0 + size / 3 {
        for x in x0..x0 + size / 3 {
            m.set(y, x, true);
        }
    }
    m
}
