//! Grayscale rasterisation for the image families.

use std::f64::consts::PI;

/// Sprite outline, tested in the sprite's own unit frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square,
    Ellipse,
    Heart,
}

impl Shape {
    pub fn from_index(i: usize) -> Shape {
        match i % 3 {
            0 => Shape::Square,
            1 => Shape::Ellipse,
            _ => Shape::Heart,
        }
    }

    /// Area enclosed by the outline in the unit frame.
    pub fn unit_area(self) -> f64 {
        match self {
            Shape::Square => 2.56,
            Shape::Ellipse => 0.6 * PI,
            Shape::Heart => 2.769,
        }
    }

    /// Membership of `(u, v)` with both coordinates roughly in `[-1, 1]`; `v` points up.
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
            Shape::Ellipse => (u * u) / 1.0 + (v * v) / 0.36 <= 1.0,
            Shape::Heart => {
                let (x, y) = (u * 1.15, v * 1.15 + 0.15);
                let r = x * x + y * y - 1.0;
                r * r * r - x * x * y * y * y <= 0.0
            }
        }
    }
}

/// Adds an isotropic Gaussian bump of peak `intensity` centred at (`row`, `col`).
pub fn add_gaussian(image: &mut [f64], res: usize, row: f64, col: f64, sigma: f64, intensity: f64) {
    let denom = 2.0 * sigma * sigma;
    for r in 0..res {
        for c in 0..res {
            let dr = r as f64 - row;
            let dc = c as f64 - col;
            image[r * res + c] += intensity * (-(dr * dr + dc * dc) / denom).exp();
        }
    }
}

/// Draws a filled sprite with 3×3 supersampling so edges are anti-aliased.
///
/// `cx`, `cy` are pixel coordinates of the centre (column, row), `half` the
/// half-extent in pixels and `angle_deg` a counter-clockwise rotation.
pub fn draw_sprite(image: &mut [f64], res: usize, shape: Shape, cx: f64, cy: f64, half: f64, angle_deg: f64) {
    const SUB: usize = 3;
    let (sin, cos) = (angle_deg * PI / 180.0).sin_cos();
    let reach = half * 1.5 + 1.0;
    let r0 = ((cy - reach).floor().max(0.0)) as usize;
    let r1 = ((cy + reach).ceil().min(res as f64 - 1.0)).max(0.0) as usize;
    let c0 = ((cx - reach).floor().max(0.0)) as usize;
    let c1 = ((cx + reach).ceil().min(res as f64 - 1.0)).max(0.0) as usize;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let mut hits = 0usize;
            for sr in 0..SUB {
                for sc in 0..SUB {
                    let py = r as f64 + (sr as f64 + 0.5) / SUB as f64 - 0.5;
                    let px = c as f64 + (sc as f64 + 0.5) / SUB as f64 - 0.5;
                    let (dx, dy) = ((px - cx) / half, (cy - py) / half);
                    let u = cos * dx + sin * dy;
                    let v = -sin * dx + cos * dy;
                    if shape.contains(u, v) {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let cover = hits as f64 / (SUB * SUB) as f64;
                let px = &mut image[r * res + c];
                *px = px.max(cover);
            }
        }
    }
}
