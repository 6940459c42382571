//! Shape rasterization and pixel painting.

use usersod_core::BinaryMask;

use crate::attributes::{Color, Shape, Texture};

/// Half-extent (in pixels) of a shape with the given area, used to keep it inside the frame.
pub fn half_extent(shape: Shape, area: f64) -> f64 {
    match shape {
        Shape::Circle => (area / std::f64::consts::PI).sqrt(),
        Shape::Square => area.sqrt() / 2.0,
        Shape::Triangle => {
            let side = (4.0 * area / 3f64.sqrt()).sqrt();
            let height = side * 3f64.sqrt() / 2.0;
            (side / 2.0).max(2.0 * height / 3.0)
        }
        Shape::Star => star_outer_radius(area),
    }
}

const STAR_INNER_RATIO: f64 = 0.5;

fn star_outer_radius(area: f64) -> f64 {
    // Ten triangles with sides R and rR meeting at 36 degrees.
    let k = 5.0 * STAR_INNER_RATIO * 36f64.to_radians().sin();
    (area / k).sqrt()
}

fn polygon_contains(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn outline(shape: Shape, cx: f64, cy: f64, area: f64) -> Option<Vec<(f64, f64)>> {
    match shape {
        Shape::Triangle => {
            let side = (4.0 * area / 3f64.sqrt()).sqrt();
            let h = side * 3f64.sqrt() / 2.0;
            Some(vec![
                (cx, cy - 2.0 * h / 3.0),
                (cx + side / 2.0, cy + h / 3.0),
                (cx - side / 2.0, cy + h / 3.0),
            ])
        }
        Shape::Star => {
            let outer = star_outer_radius(area);
            let inner = outer * STAR_INNER_RATIO;
            Some(
                (0..10)
                    .map(|i| {
                        let r = if i % 2 == 0 { outer } else { inner };
                        let a = -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::PI / 5.0;
                        (cx + r * a.cos(), cy + r * a.sin())
                    })
                    .collect(),
            )
        }
        _ => None,
    }
}

/// Rasterize a shape centred at (cx, cy) with the requested area; pixel centres are sampled.
pub fn rasterize(shape: Shape, cx: f64, cy: f64, area: f64, height: usize, width: usize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(height, width);
    let poly = outline(shape, cx, cy, area);
    let r = half_extent(shape, area);
    let y0 = ((cy - r).floor().max(0.0)) as usize;
    let y1 = ((cy + r).ceil().min(height as f64)) as usize;
    let x0 = ((cx - r).floor().max(0.0)) as usize;
    let x1 = ((cx + r).ceil().min(width as f64)) as usize;
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = match shape {
                Shape::Circle => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
                Shape::Square => (px - cx).abs() <= r && (py - cy).abs() <= r,
                Shape::Triangle | Shape::Star => {
                    polygon_contains(poly.as_deref().expect("polygonal shape"), px, py)
                }
            };
            if inside {
                mask.set(y, x, true);
            }
        }
    }
    mask
}

/// Darkening factor of the alternate stripes.
pub const STRIPE_SHADE: f64 = 0.55;

/// 8-bit colour of an object pixel; striped objects use 4-pixel diagonal stripes.
pub fn object_pixel(color: Color, texture: Texture, y: usize, x: usize) -> [u8; 3] {
    let base = color.rgb8();
    match texture {
        Texture::Solid => base,
        Texture::Striped => {
            if ((x + y) / 2) % 2 == 0 {
                base
            } else {
                base.map(|c| (c as f64 * STRIPE_SHADE).round() as u8)
            }
        }
    }
}
