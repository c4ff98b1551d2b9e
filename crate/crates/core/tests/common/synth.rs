//! Synthetic schematic scenes with known geometry.

#![allow(dead_code)]

use image::{DynamicImage, GrayImage, Luma};
use rand::Rng;

pub type P = (f64, f64);

pub struct Canvas {
    pub img: GrayImage,
}

impl Canvas {
    pub fn new(w: u32, h: u32) -> Self {
        Canvas {
            img: GrayImage::from_pixel(w, h, Luma([255])),
        }
    }

    fn paint_where(&mut self, lo: P, hi: P, inside: impl Fn(f64, f64) -> bool) {
        let (w, h) = self.img.dimensions();
        let x0 = lo.0.floor().max(0.0) as u32;
        let y0 = lo.1.floor().max(0.0) as u32;
        let x1 = (hi.0.ceil() as i64).clamp(0, w as i64 - 1) as u32;
        let y1 = (hi.1.ceil() as i64).clamp(0, h as i64 - 1) as u32;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if inside(x as f64, y as f64) {
                    self.img.put_pixel(x, y, Luma([0]));
                }
            }
        }
    }

    /// Pixels within `thickness / 2` of the segment.
    pub fn segment(&mut self, a: P, b: P, thickness: f64) {
        let r = thickness / 2.0;
        let lo = (a.0.min(b.0) - r, a.1.min(b.1) - r);
        let hi = (a.0.max(b.0) + r, a.1.max(b.1) + r);
        self.paint_where(lo, hi, |x, y| dist_to_segment((x, y), a, b) <= r);
    }

    pub fn polyline(&mut self, pts: &[P], thickness: f64) {
        for w in pts.windows(2) {
            self.segment(w[0], w[1], thickness);
        }
    }

    pub fn polygon(&mut self, pts: &[P], thickness: f64) {
        self.polyline(pts, thickness);
        self.segment(pts[pts.len() - 1], pts[0], thickness);
    }

    pub fn circle(&mut self, c: P, radius: f64, thickness: f64) {
        let r = thickness / 2.0;
        let ext = radius + r;
        self.paint_where((c.0 - ext, c.1 - ext), (c.0 + ext, c.1 + ext), |x, y| {
            (((x - c.0).powi(2) + (y - c.1).powi(2)).sqrt() - radius).abs() <= r
        });
    }

    pub fn into_dynamic(self) -> DynamicImage {
        DynamicImage::ImageLuma8(self.img)
    }
}

pub fn dist_to_segment(p: P, a: P, b: P) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

pub fn rotate(p: P, c: P, deg: f64) -> P {
    let (s, co) = deg.to_radians().sin_cos();
    let (x, y) = (p.0 - c.0, p.1 - c.1);
    (c.0 + x * co - y * s, c.1 + x * s + y * co)
}

/// Rhombus with the given side and interior angle, rotated about its center.
pub fn rhombus(c: P, side: f64, angle_deg: f64, rot_deg: f64) -> [P; 4] {
    let half = angle_deg.to_radians() / 2.0;
    let (dx, dy) = (side * half.cos(), side * half.sin());
    [(c.0 - dx, c.1), (c.0, c.1 - dy), (c.0 + dx, c.1), (c.0, c.1 + dy)].map(|p| rotate(p, c, rot_deg))
}

/// Axis-diagonal kite: top/left sides `a`, bottom/right sides `b`.
/// Side ratio is `b / a`; the shape is tangential, so stroke offsets keep
/// the ratio.
pub fn kite(c: P, a: f64, b: f64) -> [P; 4] {
    // diagonal along x from (c.x - p, c.y) ... choose half-width h of the
    // vertical diagonal; top vertex at distance ya, bottom at yb
    let h = a.min(b) * 0.8;
    let ya = (a * a - h * h).sqrt();
    let yb = (b * b - h * h).sqrt();
    let cy = c.1 - (yb - ya) / 2.0;
    [(c.0, cy - ya), (c.0 + h, cy), (c.0, cy + yb), (c.0 - h, cy)]
}

pub fn rectangle(c: P, w: f64, h: f64, rot_deg: f64) -> [P; 4] {
    let (a, b) = (w / 2.0, h / 2.0);
    [(c.0 - a, c.1 - b), (c.0 + a, c.1 - b), (c.0 + a, c.1 + b), (c.0 - a, c.1 + b)]
        .map(|p| rotate(p, c, rot_deg))
}

pub struct Scene {
    pub image: DynamicImage,
    pub rhombi: Vec<[P; 4]>,
}

/// A 640x480 scene on a 3x2 grid: each cell holds a rhombus, circle,
/// elongated rectangle or nothing, plus open wires. Rhombi may carry wires
/// leaving from their vertices.
pub fn random_scene(rng: &mut impl Rng) -> Scene {
    let (w, h) = (640.0, 480.0);
    let (cols, rows) = (3, 2);
    let (cw, ch) = (w / cols as f64, h / rows as f64);
    let mut canvas = Canvas::new(w as u32, h as u32);
    let mut rhombi = Vec::new();
    let t = rng.random_range(2.0..3.5);
    for row in 0..rows {
        for col in 0..cols {
            let c = (
                cw * (col as f64 + 0.5) + rng.random_range(-10.0..10.0),
                ch * (row as f64 + 0.5) + rng.random_range(-10.0..10.0),
            );
            match rng.random_range(0..4) {
                0 => {
                    let side = rng.random_range(55.0..90.0);
                    let angle = rng.random_range(60.0..120.0);
                    let rot = rng.random_range(0.0..180.0);
                    let r = rhombus(c, side, angle, rot);
                    canvas.polygon(&r, t);
                    if rng.random_bool(0.5) {
                        // wire leaving the outermost vertex in x
                        let v = *r.iter().max_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
                        let end = (v.0 + rng.random_range(15.0..(cw / 2.0 - 5.0).max(16.0)), v.1);
                        canvas.segment(v, end, t);
                    }
                    rhombi.push(r);
                }
                1 => canvas.circle(c, rng.random_range(20.0..60.0), t),
                2 => {
                    let short = rng.random_range(40.0..70.0);
                    let ratio = rng.random_range(1.2..2.2);
                    let rot = rng.random_range(0.0..180.0);
                    canvas.polygon(&rectangle(c, short * ratio, short, rot), t);
                }
                _ => {
                    // an open L-shaped wire
                    let a = (c.0 - 60.0, c.1 - 40.0);
                    let b = (c.0 + 60.0, c.1 - 40.0);
                    let d = (c.0 + 60.0, c.1 + 40.0);
                    canvas.polyline(&[a, b, d], t);
                }
            }
        }
    }
    Scene {
        image: canvas.into_dynamic(),
        rhombi,
    }
}

pub fn box_contains(b: &verispice::model::DetectionBox, pts: &[P]) -> bool {
    pts.iter().all(|&(x, y)| b.contains_point(x, y))
}
