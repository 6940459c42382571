//! On-disk dataset layout.
//!
//! ```text
//! manifest.jsonl           one line per training sample
//! scenes.jsonl             one line per scene (objects, commands, seed)
//! images/{scene_id}.png    8-bit RGB
//! masks/{scene_id}_{object_id}.png   8-bit gray, foreground 255
//! masks_gtb/{scene_id}.png           conventional ground truth
//! ```
//!
//! Paths inside the manifest are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::raster::{BinaryMask, BoundingBox, ImageTensor};
use crate::scene::{AttributeMap, Need, NeedCommand, ObjectRecord, Provenance, SceneRecord, TrainingSample};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SCENES_FILE: &str = "scenes.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestLine {
    pub scene_id: u32,
    pub image: String,
    pub command: Option<String>,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_object_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ObjectLine {
    object_id: u32,
    bbox: BoundingBox,
    mask: String,
    semantic_label: String,
    attributes: AttributeMap,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SceneLine {
    scene_id: u32,
    image: String,
    rng_seed: u64,
    gt_b: String,
    gt_b_object_id: u32,
    objects: Vec<ObjectLine>,
    commands: Vec<NeedCommand>,
}

pub fn image_rel_path(scene_id: u32) -> String {
    format!("images/{scene_id}.png")
}

pub fn mask_rel_path(scene_id: u32, object_id: u32) -> String {
    format!("masks/{scene_id}_{object_id}.png")
}

pub fn gtb_rel_path(scene_id: u32) -> String {
    format!("masks_gtb/{scene_id}.png")
}

/// Collects files to write so that conflicting content is caught before anything hits disk.
#[derive(Default)]
struct PendingFiles {
    images: BTreeMap<String, Arc<ImageTensor>>,
    masks: BTreeMap<String, BinaryMask>,
}

impl PendingFiles {
    fn image(&mut self, path: String, img: &Arc<ImageTensor>) -> Result<()> {
        if !img.is_quantized() {
            return Err(CoreError::invalid(
                "image",
                format!("{path}: values are not multiples of 1/255 and would not round-trip"),
            ));
        }
        match self.images.get(&path) {
            Some(existing) if **existing != **img => Err(CoreError::invalid(
                "dataset",
                format!("two different images map to {path}"),
            )),
            Some(_) => Ok(()),
            None => {
                self.images.insert(path, Arc::clone(img));
                Ok(())
            }
        }
    }

    fn mask(&mut self, path: String, mask: &BinaryMask) -> Result<()> {
        match self.masks.get(&path) {
            Some(existing) if existing != mask => Err(CoreError::invalid(
                "dataset",
                format!("two different masks map to {path}"),
            )),
            Some(_) => Ok(()),
            None => {
                self.masks.insert(path, mask.clone());
                Ok(())
            }
        }
    }

    fn flush(&self, root: &Path) -> Result<()> {
        for (rel, img) in &self.images {
            let path = root.join(rel);
            ensure_parent(&path)?;
            image::save_buffer(
                &path,
                &img.to_rgb8(),
                img.width() as u32,
                img.height() as u32,
                image::ColorType::Rgb8,
            )
            .map_err(|source| CoreError::Image {
                path: path.clone(),
                source,
            })?;
        }
        for (rel, mask) in &self.masks {
            let path = root.join(rel);
            ensure_parent(&path)?;
            save_mask_png(&path, mask)?;
        }
        Ok(())
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    Ok(())
}

pub fn save_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    image::save_buffer(
        path,
        &mask.to_luma8(),
        mask.width() as u32,
        mask.height() as u32,
        image::ColorType::L8,
    )
    .map_err(|source| CoreError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|source| CoreError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    BinaryMask::from_luma8(h as usize, w as usize, luma.as_raw()).map_err(|e| CoreError::Invalid {
        what: "mask file",
        reason: format!("{}: {e}", path.display()),
    })
}

pub fn load_image_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|source| CoreError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageTensor::from_rgb8(h as usize, w as usize, rgb.as_raw())
}

/// Encode a mask as PNG bytes ({0,255}).
pub fn mask_to_png_bytes(mask: &BinaryMask) -> Vec<u8> {
    encode_png(
        &mask.to_luma8(),
        mask.width(),
        mask.height(),
        image::ExtendedColorType::L8,
    )
}

pub fn image_to_png_bytes(img: &ImageTensor) -> Vec<u8> {
    encode_png(
        &img.to_rgb8(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )
}

fn encode_png(raw: &[u8], width: usize, height: usize, color: image::ExtendedColorType) -> Vec<u8> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(raw, width as u32, height as u32, color)
        .expect("in-memory PNG encoding cannot fail for well-formed buffers");
    out
}

pub fn mask_from_png_bytes(bytes: &[u8]) -> Result<BinaryMask> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| CoreError::invalid("mask png", e.to_string()))?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    BinaryMask::from_luma8(h as usize, w as usize, luma.as_raw())
}

pub fn image_from_png_bytes(bytes: &[u8]) -> Result<ImageTensor> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| CoreError::invalid("image png", e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageTensor::from_rgb8(h as usize, w as usize, rgb.as_raw())
}

fn manifest_line(sample: &TrainingSample) -> ManifestLine {
    match &sample.need {
        Need::Command(c) => ManifestLine {
            scene_id: sample.scene_id,
            image: image_rel_path(sample.scene_id),
            command: Some(c.text.clone()),
            mask: mask_rel_path(sample.scene_id, c.target_object_id),
            command_id: Some(c.command_id),
            target_object_id: Some(c.target_object_id),
            provenance: Some(c.provenance),
        },
        Need::Zero => ManifestLine {
            scene_id: sample.scene_id,
            image: image_rel_path(sample.scene_id),
            command: None,
            mask: gtb_rel_path(sample.scene_id),
            command_id: None,
            target_object_id: None,
            provenance: None,
        },
    }
}

fn write_jsonl<S: Serialize>(path: &Path, lines: &[S]) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        let text = serde_json::to_string(line).expect("manifest lines serialize");
        writeln!(w, "{text}").map_err(|e| CoreError::io(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Write training samples (images, masks, manifest). Returns the manifest path.
///
/// Every sample is validated first; nothing is written if any sample is invalid.
pub fn write_samples(samples: &[TrainingSample], out_dir: &Path) -> Result<PathBuf> {
    let mut files = PendingFiles::default();
    let mut lines = Vec::with_capacity(samples.len());
    for s in samples {
        s.validate()?;
        let line = manifest_line(s);
        files.image(line.image.clone(), &s.image)?;
        files.mask(line.mask.clone(), &s.gt)?;
        lines.push(line);
    }
    fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir, e))?;
    files.flush(out_dir)?;
    let manifest = out_dir.join(MANIFEST_FILE);
    write_jsonl(&manifest, &lines)?;
    Ok(manifest)
}

/// Write whole scenes: their training samples plus the per-scene sidecar.
pub fn serialize_dataset(records: &[SceneRecord], out_dir: &Path) -> Result<PathBuf> {
    for r in records {
        r.validate()?;
    }
    let mut files = PendingFiles::default();
    let mut scene_lines = Vec::with_capacity(records.len());
    let mut samples = Vec::new();
    for r in records {
        for o in &r.objects {
            files.mask(mask_rel_path(r.scene_id, o.object_id), &o.mask)?;
        }
        let gt_b_object_id = r.gt_b_object_id().expect("validated scene");
        scene_lines.push(SceneLine {
            scene_id: r.scene_id,
            image: image_rel_path(r.scene_id),
            rng_seed: r.rng_seed,
            gt_b: gtb_rel_path(r.scene_id),
            gt_b_object_id,
            objects: r
                .objects
                .iter()
                .map(|o| ObjectLine {
                    object_id: o.object_id,
                    bbox: o.bbox,
                    mask: mask_rel_path(r.scene_id, o.object_id),
                    semantic_label: o.semantic_label.clone(),
                    attributes: o.attributes.clone(),
                })
                .collect(),
            commands: r.commands.clone(),
        });
        samples.extend(r.training_samples());
    }
    let manifest = write_samples(&samples, out_dir)?;
    files.flush(out_dir)?;
    write_jsonl(&out_dir.join(SCENES_FILE), &scene_lines)?;
    Ok(manifest)
}

struct FileCache<'a> {
    root: &'a Path,
    images: BTreeMap<String, Arc<ImageTensor>>,
    masks: BTreeMap<String, BinaryMask>,
}

impl<'a> FileCache<'a> {
    fn new(root: &'a Path) -> Self {
        Self {
            root,
            images: BTreeMap::new(),
            masks: BTreeMap::new(),
        }
    }

    fn image(&mut self, rel: &str) -> Result<Arc<ImageTensor>> {
        if let Some(img) = self.images.get(rel) {
            return Ok(Arc::clone(img));
        }
        let img = Arc::new(load_image_png(&self.root.join(rel))?);
        self.images.insert(rel.to_string(), Arc::clone(&img));
        Ok(img)
    }

    fn mask(&mut self, rel: &str) -> Result<BinaryMask> {
        if let Some(m) = self.masks.get(rel) {
            return Ok(m.clone());
        }
        let m = load_mask_png(&self.root.join(rel))?;
        self.masks.insert(rel.to_string(), m.clone());
        Ok(m)
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Load every sample listed in a manifest, in manifest order.
pub fn load_dataset(manifest: &Path) -> Result<Vec<TrainingSample>> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut cache = FileCache::new(root);
    let mut out = Vec::new();
    let at = |line: usize, reason: String| CoreError::Manifest {
        path: manifest.to_path_buf(),
        line,
        reason,
    };
    for (no, text) in read_lines(manifest)? {
        let entry: ManifestLine =
            serde_json::from_str(&text).map_err(|e| at(no, format!("malformed line: {e}")))?;
        let image = cache.image(&entry.image).map_err(|e| at(no, e.to_string()))?;
        let gt = cache.mask(&entry.mask).map_err(|e| at(no, e.to_string()))?;
        let need = match entry.command {
            None => Need::Zero,
            Some(text) => Need::Command(NeedCommand {
                command_id: entry.command_id.unwrap_or(0),
                text,
                target_object_id: entry.target_object_id.unwrap_or(0),
                provenance: entry.provenance.unwrap_or(Provenance::ExternalService),
            }),
        };
        let sample = TrainingSample {
            scene_id: entry.scene_id,
            image,
            need,
            gt,
        };
        sample.validate().map_err(|e| at(no, e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}

/// Load the per-scene sidecar written by [`serialize_dataset`].
pub fn load_scenes(dir: &Path) -> Result<Vec<SceneRecord>> {
    let path = dir.join(SCENES_FILE);
    let mut cache = FileCache::new(dir);
    let mut out = Vec::new();
    let at = |line: usize, reason: String| CoreError::Manifest {
        path: path.clone(),
        line,
        reason,
    };
    for (no, text) in read_lines(&path)? {
        let entry: SceneLine =
            serde_json::from_str(&text).map_err(|e| at(no, format!("malformed line: {e}")))?;
        let image = cache.image(&entry.image).map_err(|e| at(no, e.to_string()))?;
        let gt_b = cache.mask(&entry.gt_b).map_err(|e| at(no, e.to_string()))?;
        let mut objects = Vec::with_capacity(entry.objects.len());
        for o in entry.objects {
            objects.push(ObjectRecord {
                object_id: o.object_id,
                bbox: o.bbox,
                mask: cache.mask(&o.mask).map_err(|e| at(no, e.to_string()))?,
                semantic_label: o.semantic_label,
                attributes: o.attributes,
            });
        }
        let record = SceneRecord {
            scene_id: entry.scene_id,
            image,
            objects,
            commands: entry.commands,
            gt_b,
            rng_seed: entry.rng_seed,
        };
        record.validate().map_err(|e| at(no, e.to_string()))?;
        if record.gt_b_object_id() != Some(entry.gt_b_object_id) {
            return Err(at(no, "gt_b mask does not match gt_b_object_id".into()));
        }
        out.push(record);
    }
    Ok(out)
}
