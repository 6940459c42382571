//! Pixel containers: RGB images, binary masks, saliency maps and boxes.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Default working resolution (square).
pub const DEFAULT_RESOLUTION: usize = 96;

/// Planar RGB image (`[3, height, width]`) with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CoreError::invalid("image", "empty image"));
        }
        if data.len() != Self::CHANNELS * height * width {
            return Err(CoreError::invalid(
                "image",
                format!("expected {} values, got {}", 3 * height * width, data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::invalid("image", format!("value {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; Self::CHANNELS * height * width],
        }
    }

    /// Build from interleaved 8-bit RGB, mapping `k` to `k / 255`.
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * height * width {
            return Err(CoreError::invalid("image", "rgb buffer size mismatch"));
        }
        let hw = height * width;
        let mut data = vec![0.0; 3 * hw];
        for (p, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * hw + p] = quantum(px[c]);
            }
        }
        Self::new(height, width, data)
    }

    /// Interleaved 8-bit RGB, rounding each value to the nearest step of 1/255.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let hw = self.height * self.width;
        let mut out = vec![0u8; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                out[3 * p + c] = to_u8(self.data[c * hw + p]);
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let hw = self.height * self.width;
        let p = y * self.width + x;
        [self.data[p], self.data[hw + p], self.data[2 * hw + p]]
    }

    /// Element-wise product with a mask: background pixels become exactly 0.
    pub fn masked(&self, mask: &BinaryMask) -> Result<Self> {
        check_same_shape(self.height, self.width, mask.height(), mask.width())?;
        let hw = self.height * self.width;
        let mut data = self.data.clone();
        for c in 0..3 {
            for (v, &m) in data[c * hw..(c + 1) * hw].iter_mut().zip(mask.data()) {
                if m == 0 {
                    *v = 0.0;
                }
            }
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            data,
        })
    }

    /// True when every value is an exact multiple of 1/255 (survives PNG storage).
    pub fn is_quantized(&self) -> bool {
        self.data.iter().all(|&v| quantum(to_u8(v)) == v)
    }
}

/// The f32 value stored for an 8-bit level.
pub fn quantum(k: u8) -> f32 {
    k as f32 / 255.0
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn check_same_shape(h: usize, w: usize, h2: usize, w2: usize) -> Result<()> {
    if h != h2 || w != w2 {
        return Err(CoreError::invalid(
            "shape",
            format!("{h}x{w} does not match {h2}x{w2}"),
        ));
    }
    Ok(())
}

/// Strictly binary mask; values are 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(CoreError::invalid("mask", "size mismatch"));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(CoreError::invalid("mask", "values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    /// Decode an 8-bit grayscale mask stored as {0, 255}.
    pub fn from_luma8(height: usize, width: usize, luma: &[u8]) -> Result<Self> {
        if luma.len() != height * width {
            return Err(CoreError::invalid("mask", "size mismatch"));
        }
        let mut data = Vec::with_capacity(luma.len());
        for &v in luma {
            match v {
                0 => data.push(0),
                255 => data.push(1),
                other => {
                    return Err(CoreError::invalid(
                        "mask",
                        format!("stored value {other} is not 0 or 255"),
                    ))
                }
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn to_luma8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v * 255).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn iou(&self, other: &Self) -> f64 {
        assert_eq!((self.height, self.width), (other.height, other.width));
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a & b) as usize;
            union += (a | b) as usize;
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Tight bounding box of the foreground, if any.
    pub fn bbox(&self) -> Option<BoundingBox> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    b = Some(match b {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        b.map(|(x0, y0, x1, y1)| BoundingBox {
            x_min: x0 as u32,
            y_min: y0 as u32,
            x_max: x1 as u32,
            y_max: y1 as u32,
        })
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Dense prediction with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(CoreError::invalid("saliency map", "size mismatch"));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::invalid(
                "saliency map",
                format!("value {v} outside [0,1]"),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            height: mask.height,
            width: mask.width,
            data: mask.to_f32(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_luma8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }
}

/// Axis-aligned box in pixel coordinates; maxima are exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(CoreError::invalid("bbox", format!("{self:?} is empty")));
        }
        if self.x_max as usize > width || self.y_max as usize > height {
            return Err(CoreError::invalid(
                "bbox",
                format!("{self:?} exceeds {width}x{height}"),
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> u32 {
        self.y_max.saturating_sub(self.y_min)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let ix = self.x_max.min(other.x_max).saturating_sub(self.x_min.max(other.x_min)) as u64;
        let iy = self.y_max.min(other.y_max).saturating_sub(self.y_min.max(other.y_min)) as u64;
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// True when (y, x) lies inside the box grown by `margin` pixels.
    pub fn contains_with_margin(&self, y: usize, x: usize, margin: u32) -> bool {
        let (x, y) = (x as i64, y as i64);
        let m = margin as i64;
        x >= self.x_min as i64 - m
            && x < self.x_max as i64 + m
            && y >= self.y_min as i64 - m
            && y < self.y_max as i64 + m
    }
}
