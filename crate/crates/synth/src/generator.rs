use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use usersod_core::{rng, BinaryMask, CoreError, ImageTensor, ObjectRecord, Result, SceneRecord};

use crate::attributes::{Appearance, Color, Shape, Size, Texture};
use crate::needs::make_commands;
use crate::render::{half_extent, object_pixel, rasterize};

/// Placement attempts per object before the whole scene is redrawn.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

/// Gray level of the background and its per-pixel noise amplitude.
pub const BACKGROUND_GRAY: f64 = 0.5;
pub const BACKGROUND_NOISE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub num_scenes: u32,
    pub resolution: usize,
    /// Inclusive range of objects per scene.
    pub objects_per_scene: [usize; 2],
    pub palette: Vec<Color>,
    pub shapes: Vec<Shape>,
    pub sizes: Vec<Size>,
    pub textures: Vec<Texture>,
    pub max_pairwise_iou: f64,
    pub near_miss_fraction: f64,
    /// Smallest fraction of an object's shape that must stay unoccluded.
    pub min_visible_fraction: f64,
    /// Make objects 0 and 1 identical except for colour.
    pub twin_pair: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            num_scenes: 100,
            resolution: usersod_core::DEFAULT_RESOLUTION,
            objects_per_scene: [2, 6],
            palette: Color::ALL.to_vec(),
            shapes: Shape::ALL.to_vec(),
            sizes: Size::ALL.to_vec(),
            textures: Texture::ALL.to_vec(),
            max_pairwise_iou: 0.3,
            near_miss_fraction: 0.25,
            min_visible_fraction: 0.75,
            twin_pair: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(CoreError::invalid("generator config", reason));
        let [lo, hi] = self.objects_per_scene;
        if lo == 0 || lo > hi {
            return bad("objects_per_scene must be a non-empty range starting at 1 or more");
        }
        if self.palette.is_empty() || self.shapes.is_empty() || self.sizes.is_empty() || self.textures.is_empty() {
            return bad("palette, shapes, sizes and textures must be non-empty");
        }
        if self.palette.len() * self.shapes.len() * self.sizes.len() < hi {
            return bad("not enough distinct colour/shape/size combinations for objects_per_scene");
        }
        if !(0.0..=1.0).contains(&self.near_miss_fraction) {
            return bad("near_miss_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.max_pairwise_iou) || !(0.0..=1.0).contains(&self.min_visible_fraction) {
            return bad("max_pairwise_iou and min_visible_fraction must lie in [0, 1]");
        }
        if self.resolution < 16 {
            return bad("resolution must be at least 16");
        }
        if self.twin_pair && (lo < 2 || self.palette.len() < 2) {
            return bad("twin_pair needs at least 2 objects per scene and 2 colours");
        }
        Ok(())
    }
}

/// Generate scene `scene_index`; a pure function of `(config.seed, scene_index)`.
pub fn generate_scene(config: &GeneratorConfig, scene_index: u32) -> Result<SceneRecord> {
    config.validate()?;
    if scene_index >= config.num_scenes {
        return Err(CoreError::invalid(
            "scene_index",
            format!("{scene_index} is not below num_scenes {}", config.num_scenes),
        ));
    }
    for sub_seed in 0u64.. {
        let seed = rng::derive_seed(config.seed, &[scene_index as u64, sub_seed]);
        if let Some(scene) = try_generate(config, scene_index, seed) {
            return Ok(scene);
        }
    }
    unreachable!("sub-seed space exhausted")
}

pub fn generate_dataset(config: &GeneratorConfig) -> Result<Vec<SceneRecord>> {
    (0..config.num_scenes).map(|i| generate_scene(config, i)).collect()
}

fn pick<T: Copy>(r: &mut rng::Rng, items: &[T]) -> T {
    *items.choose(r).expect("validated non-empty")
}

fn draw_appearances(config: &GeneratorConfig, r: &mut rng::Rng, n: usize) -> Option<Vec<Appearance>> {
    let mut out: Vec<Appearance> = Vec::with_capacity(n);
    let random = |r: &mut rng::Rng| Appearance {
        color: pick(r, &config.palette),
        shape: pick(r, &config.shapes),
        size: pick(r, &config.sizes),
        texture: pick(r, &config.textures),
    };
    if config.twin_pair {
        let a = random(r);
        let others: Vec<Color> = config.palette.iter().copied().filter(|&c| c != a.color).collect();
        let b = Appearance { color: pick(r, &others), ..a };
        out.extend([a, b]);
    }
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        if tries > 1000 {
            return None;
        }
        let cand = random(r);
        if !out
            .iter()
            .any(|o| (o.color, o.shape, o.size) == (cand.color, cand.shape, cand.size))
        {
            out.push(cand);
        }
    }
    Some(out)
}

fn visible_count(mask: &BinaryMask, above: &[BinaryMask]) -> usize {
    let (h, w) = (mask.height(), mask.width());
    let mut n = 0;
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) && !above.iter().any(|m| m.get(y, x)) {
                n += 1;
            }
        }
    }
    n
}

fn try_generate(config: &GeneratorConfig, scene_index: u32, seed: u64) -> Option<SceneRecord> {
    let res = config.resolution;
    let mut r = rng::stream(seed, &[rng::label_id("layout")]);
    let [lo, hi] = config.objects_per_scene;
    let n = r.gen_range(lo..=hi);
    let appearances = draw_appearances(config, &mut r, n)?;

    // Objects later in the list are painted on top of earlier ones.
    let mut full: Vec<BinaryMask> = Vec::with_capacity(n);
    for app in &appearances {
        let area = app.size.area_fraction() * (res * res) as f64;
        let reach = half_extent(app.shape, area).min(res as f64 / 2.0);
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cx = r.gen_range(reach..=res as f64 - reach);
            let cy = r.gen_range(reach..=res as f64 - reach);
            let mask = rasterize(app.shape, cx, cy, area, res, res);
            let Some(bbox) = mask.bbox() else { continue };
            let overlaps = full.iter().any(|m| {
                m.iou(&mask) > config.max_pairwise_iou
                    || m.bbox().is_some_and(|b| b.iou(&bbox) > config.max_pairwise_iou)
            });
            if overlaps {
                continue;
            }
            let occluded = full.iter().enumerate().any(|(i, m)| {
                let mut above: Vec<BinaryMask> = full[i + 1..].to_vec();
                above.push(mask.clone());
                (visible_count(m, &above) as f64) < config.min_visible_fraction * m.area() as f64
            });
            if !occluded {
                placed = Some(mask);
                break;
            }
        }
        full.push(placed?);
    }

    let mut noise = rng::stream(seed, &[rng::label_id("background")]);
    let mut rgb: Vec<u8> = (0..3 * res * res)
        .map(|_| {
            let v = BACKGROUND_GRAY + noise.gen_range(-BACKGROUND_NOISE..=BACKGROUND_NOISE);
            (v * 255.0).round() as u8
        })
        .collect();
    for (app, mask) in appearances.iter().zip(&full) {
        for y in 0..res {
            for x in 0..res {
                if mask.get(y, x) {
                    let px = object_pixel(app.color, app.texture, y, x);
                    rgb[3 * (y * res + x)..3 * (y * res + x) + 3].copy_from_slice(&px);
                }
            }
        }
    }
    let image = Arc::new(ImageTensor::from_rgb8(res, res, &rgb).ok()?);

    let objects: Vec<ObjectRecord> = appearances
        .iter()
        .enumerate()
        .map(|(i, app)| {
            let visible = {
                let mut m = BinaryMask::zeros(res, res);
                for y in 0..res {
                    for x in 0..res {
                        if full[i].get(y, x) && !full[i + 1..].iter().any(|o| o.get(y, x)) {
                            m.set(y, x, true);
                        }
                    }
                }
                m
            };
            ObjectRecord {
                object_id: i as u32,
                bbox: visible.bbox().expect("visibility bound keeps masks non-empty"),
                mask: visible,
                semantic_label: app.shape.to_string(),
                attributes: app.to_map(),
            }
        })
        .collect();

    let mut scene = SceneRecord {
        scene_id: scene_index,
        image,
        gt_b: BinaryMask::zeros(res, res),
        objects,
        commands: Vec::new(),
        rng_seed: seed,
    };
    scene.gt_b = conventional_gt(&scene);
    scene.commands = make_commands(&scene, config);
    Some(scene)
}

/// Mean Euclidean distance of an object's pixels to the background gray.
pub fn object_contrast(image: &ImageTensor, mask: &BinaryMask) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) {
                let p = image.pixel(y, x);
                sum += p
                    .iter()
                    .map(|&c| (c as f64 - BACKGROUND_GRAY).powi(2))
                    .sum::<f64>()
                    .sqrt();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Contrasts closer than this count as equal, so ties do not hinge on summation rounding.
const CONTRAST_RESOLUTION: f64 = 1e-6;

/// Mask of the most visually striking object: highest contrast, then larger area, then smaller id.
pub fn conventional_gt(scene: &SceneRecord) -> BinaryMask {
    scene
        .objects
        .iter()
        .map(|o| {
            let c = object_contrast(&scene.image, &o.mask);
            (o, (c / CONTRAST_RESOLUTION).round() as i64)
        })
        .max_by(|(a, ca), (b, cb)| {
            ca.cmp(cb)
                .then(a.mask.area().cmp(&b.mask.area()))
                .then(b.object_id.cmp(&a.object_id))
        })
        .expect("scene has at least one object")
        .0
        .mask
        .clone()
}
