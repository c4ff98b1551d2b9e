//! Source detection on schematic images.
//!
//! Dependent sources are drawn as rhombi and found geometrically: blur,
//! Canny edges, border following, Douglas-Peucker approximation, then a
//! convex 4-gon with nearly equal sides. Independent sources come from an
//! external detector reached through a command or an HTTP endpoint.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use image::{DynamicImage, GenericImageView};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DetectionBox, Origin, SourceKind};

pub const BLUR_KERNEL: usize = 5;
/// 0.3 * ((k - 1) / 2 - 1) + 0.8 for k = 5.
pub const BLUR_SIGMA: f64 = 1.1;
pub const CANNY_LOW: i32 = 50;
pub const CANNY_HIGH: i32 = 150;
pub const APPROX_EPSILON_FRACTION: f64 = 0.01;
pub const MAX_SIDE_RATIO: f64 = 1.1;
/// Quads with a shorter side are edge specks, not symbols.
pub const MIN_SIDE: f64 = 8.0;
pub const DEDUP_DISTANCE: f64 = 10.0;
pub const MARGIN: i64 = 10;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("input error: {0}")]
    Input(String),
    #[error("detector error: {0}")]
    Detector(String),
    #[error("detector output parse error: {0}")]
    Parse(String),
}

/// Single-channel 8-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        GrayImage {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let g = img.to_luma8();
        GrayImage {
            width: g.width() as usize,
            height: g.height() as usize,
            data: g.into_raw(),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }
}

/// Mirror index without repeating the edge pixel (`gfedcb|abcdefgh|gfedcba`).
fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * n - 2 - i };
    }
    i as usize
}

pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

pub fn gaussian_blur(img: &GrayImage) -> GrayImage {
    let k = gaussian_kernel(BLUR_KERNEL, BLUR_SIGMA);
    let r = (BLUR_KERNEL / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = reflect101(x as isize + i as isize - r, w);
                acc += kv * img.data[y * w + xx] as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = GrayImage::new(w, h, 0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = reflect101(y as isize + i as isize - r, h);
                acc += kv * tmp[yy * w + x];
            }
            out.data[y * w + x] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Canny edge map (255 on edges) with L1 gradient magnitude.
pub fn canny(img: &GrayImage, low: i32, high: i32) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let px = |x: isize, y: isize| img.data[reflect101(y, h) * w + reflect101(x, w)] as i32;
    let mut gx = vec![0i32; w * h];
    let mut gy = vec![0i32; w * h];
    let mut mag = vec![0i32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2 * px(x - 1, y)
                - px(x - 1, y + 1);
            let dy = px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2 * px(x, y - 1)
                - px(x + 1, y - 1);
            let i = y as usize * w + x as usize;
            gx[i] = dx;
            gy[i] = dy;
            mag[i] = dx.abs() + dy.abs();
        }
    }
    let m = |x: isize, y: isize| -> i32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    const TG22: f64 = 0.414_213_562_373_095;
    // 0 = none, 1 = weak candidate, 2 = strong
    let mut state = vec![0u8; w * h];
    let mut stack = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let v = mag[i];
            if v <= low {
                continue;
            }
            let (ax, ay) = (gx[i].abs() as f64, gy[i].abs() as f64);
            let tg22x = ax * TG22;
            let keep = if ay < tg22x {
                v > m(x - 1, y) && v >= m(x + 1, y)
            } else if ay > tg22x + 2.0 * ax {
                v > m(x, y - 1) && v >= m(x, y + 1)
            } else {
                let s = if (gx[i] ^ gy[i]) < 0 { -1 } else { 1 };
                v > m(x - s, y - 1) && v > m(x + s, y + 1)
            };
            if keep {
                if v > high {
                    state[i] = 2;
                    stack.push(i);
                } else {
                    state[i] = 1;
                }
            }
        }
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if state[j] == 1 {
                    state[j] = 2;
                    stack.push(j);
                }
            }
        }
    }
    GrayImage {
        width: w,
        height: h,
        data: state.into_iter().map(|s| if s == 2 { 255 } else { 0 }).collect(),
    }
}

pub type Point = (i32, i32);

// clockwise from east with y pointing down
const DIRS: [(i32, i32); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn dir_index(dx: i32, dy: i32) -> usize {
    DIRS.iter().position(|&d| d == (dx, dy)).expect("neighbor offset")
}

/// 3x3 binary dilation; closes one-pixel gaps between parallel edges.
pub fn dilate3(img: &GrayImage) -> GrayImage {
    let mut out = GrayImage::new(img.width, img.height, 0);
    for y in 0..img.height {
        for x in 0..img.width {
            let hit = (y.saturating_sub(1)..(y + 2).min(img.height))
                .any(|yy| (x.saturating_sub(1)..(x + 2).min(img.width)).any(|xx| img.get(xx, yy) != 0));
            if hit {
                out.set(x, y, 255);
            }
        }
    }
    out
}

/// All borders (outer and hole) of the nonzero regions, by Suzuki-Abe
/// border following, in raster discovery order.
pub fn find_contours(binary: &GrayImage) -> Vec<Vec<Point>> {
    let (w, h) = (binary.width as i32 + 2, binary.height as i32 + 2);
    let mut f = vec![0i32; (w * h) as usize];
    for y in 0..binary.height {
        for x in 0..binary.width {
            if binary.get(x, y) != 0 {
                f[((y as i32 + 1) * w + x as i32 + 1) as usize] = 1;
            }
        }
    }
    let at = |x: i32, y: i32| (y * w + x) as usize;
    let mut contours = Vec::new();
    let mut nbd = 1;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let v = f[at(x, y)];
            let start = if v == 1 && f[at(x - 1, y)] == 0 {
                Some((x - 1, y))
            } else if v >= 1 && f[at(x + 1, y)] == 0 {
                Some((x + 1, y))
            } else {
                None
            };
            let Some(from) = start else { continue };
            nbd += 1;
            let mut points = Vec::new();
            // find the first nonzero neighbor clockwise from `from`
            let d0 = dir_index(from.0 - x, from.1 - y);
            let mut first = None;
            for k in 0..8 {
                let (dx, dy) = DIRS[(d0 + k) % 8];
                if f[at(x + dx, y + dy)] != 0 {
                    first = Some((x + dx, y + dy));
                    break;
                }
            }
            let Some(p1) = first else {
                f[at(x, y)] = -nbd;
                contours.push(vec![(x - 1, y - 1)]);
                continue;
            };
            let (mut p2, mut p3) = (p1, (x, y));
            loop {
                points.push((p3.0 - 1, p3.1 - 1));
                // counterclockwise search around p3 starting after p2
                let d = dir_index(p2.0 - p3.0, p2.1 - p3.1);
                let mut p4 = p2;
                let mut east_zero = false;
                for k in 1..=8 {
                    let idx = (d + 8 - k) % 8;
                    let (dx, dy) = DIRS[idx];
                    let q = (p3.0 + dx, p3.1 + dy);
                    if f[at(q.0, q.1)] != 0 {
                        p4 = q;
                        break;
                    }
                    if idx == 0 {
                        east_zero = true;
                    }
                }
                let cur = at(p3.0, p3.1);
                if east_zero {
                    f[cur] = -nbd;
                } else if f[cur] == 1 {
                    f[cur] = nbd;
                }
                if p4 == (x, y) && p3 == p1 {
                    break;
                }
                p2 = p3;
                p3 = p4;
            }
            contours.push(points);
        }
    }
    contours
}

pub fn arc_length(points: &[Point], closed: bool) -> f64 {
    let seg = |a: Point, b: Point| (((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2)) as f64).sqrt();
    let mut s: f64 = points.windows(2).map(|p| seg(p[0], p[1])).sum();
    if closed && points.len() > 1 {
        s += seg(points[points.len() - 1], points[0]);
    }
    s
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (px, py) = (p.0 as f64, p.1 as f64);
    let (ax, ay) = (a.0 as f64, a.1 as f64);
    let (bx, by) = (b.0 as f64, b.1 as f64);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return ((px - ax).powi(2) + (py - ay).powi(2)).sqrt();
    }
    ((px - ax) * dy - (py - ay) * dx).abs() / len2.sqrt()
}

fn douglas_peucker(points: &[Point], eps: f64, out: &mut Vec<Point>) {
    let n = points.len();
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0usize, n - 1)];
    while let Some((a, b)) = stack.pop() {
        if b <= a + 1 {
            continue;
        }
        let (mut best, mut dmax) = (a, -1.0);
        for i in a + 1..b {
            let d = point_segment_distance(points[i], points[a], points[b]);
            if d > dmax {
                dmax = d;
                best = i;
            }
        }
        if dmax > eps {
            keep[best] = true;
            stack.push((a, best));
            stack.push((best, b));
        }
    }
    out.extend(points.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p));
}

/// Closed-curve Douglas-Peucker. The curve is split at two mutually far
/// points and each half is simplified.
pub fn approx_poly_closed(points: &[Point], eps: f64) -> Vec<Point> {
    if points.len() < 3 {
        return points.to_vec();
    }
    let d2 = |a: Point, b: Point| (a.0 - b.0).pow(2) + (a.1 - b.1).pow(2);
    let far = |from: Point| {
        (0..points.len())
            .max_by_key(|&i| d2(points[i], from))
            .unwrap()
    };
    let a = far(points[0]);
    let b = far(points[a]);
    let (lo, hi) = (a.min(b), a.max(b));
    if lo == hi {
        return vec![points[lo]];
    }
    let first: Vec<Point> = points[lo..=hi].to_vec();
    let mut second: Vec<Point> = points[hi..].to_vec();
    second.extend_from_slice(&points[..=lo]);
    let mut out = Vec::new();
    douglas_peucker(&first, eps, &mut out);
    out.pop();
    douglas_peucker(&second, eps, &mut out);
    out.pop();
    out.dedup();
    out
}

pub fn is_convex(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0i64;
    for i in 0..n {
        let (a, b, c) = (poly[i], poly[(i + 1) % n], poly[(i + 2) % n]);
        let cross = (b.0 - a.0) as i64 * (c.1 - b.1) as i64 - (b.1 - a.1) as i64 * (c.0 - b.0) as i64;
        if cross != 0 {
            if sign != 0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    sign != 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadCandidate {
    pub vertices: [Point; 4],
    pub sides: [f64; 4],
    pub centroid: (f64, f64),
}

impl QuadCandidate {
    pub fn from_polygon(poly: &[Point]) -> Option<Self> {
        if poly.len() != 4 || !is_convex(poly) {
            return None;
        }
        let v = [poly[0], poly[1], poly[2], poly[3]];
        let side = |i: usize| arc_length(&[v[i], v[(i + 1) % 4]], false);
        let sides = [side(0), side(1), side(2), side(3)];
        let cx = v.iter().map(|p| p.0 as f64).sum::<f64>() / 4.0;
        let cy = v.iter().map(|p| p.1 as f64).sum::<f64>() / 4.0;
        Some(QuadCandidate {
            vertices: v,
            sides,
            centroid: (cx, cy),
        })
    }

    pub fn side_ratio(&self) -> f64 {
        let max = self.sides.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.sides.iter().cloned().fold(f64::MAX, f64::min);
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn is_rhombus_like(&self) -> bool {
        self.sides.iter().all(|&s| s >= MIN_SIDE) && self.side_ratio() < MAX_SIDE_RATIO
    }

    /// Inclusive pixel bounds, widths counted as max - min + 1.
    pub fn bounding_rect(&self) -> (i64, i64, i64, i64) {
        let xs = self.vertices.map(|p| p.0 as i64);
        let ys = self.vertices.map(|p| p.1 as i64);
        let (x0, y0) = (*xs.iter().min().unwrap(), *ys.iter().min().unwrap());
        let (x1, y1) = (*xs.iter().max().unwrap(), *ys.iter().max().unwrap());
        (x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    }
}

/// Rhombus-like quadrilaterals, near-duplicate centroids removed.
pub fn rhombus_candidates(gray: &GrayImage) -> Vec<QuadCandidate> {
    let edges = dilate3(&canny(&gaussian_blur(gray), CANNY_LOW, CANNY_HIGH));
    let quads = find_contours(&edges).into_iter().filter_map(|contour| {
        let eps = APPROX_EPSILON_FRACTION * arc_length(&contour, true);
        let poly = approx_poly_closed(&contour, eps);
        QuadCandidate::from_polygon(&poly).filter(QuadCandidate::is_rhombus_like)
    });
    dedup_candidates(quads)
}

/// Keeps the first of any candidates whose centroids are closer than
/// `DEDUP_DISTANCE`.
pub fn dedup_candidates(quads: impl IntoIterator<Item = QuadCandidate>) -> Vec<QuadCandidate> {
    let mut kept: Vec<QuadCandidate> = Vec::new();
    for q in quads {
        let dup = kept.iter().any(|k| {
            let (dx, dy) = (k.centroid.0 - q.centroid.0, k.centroid.1 - q.centroid.1);
            (dx * dx + dy * dy).sqrt() < DEDUP_DISTANCE
        });
        if !dup {
            kept.push(q);
        }
    }
    kept
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub bbox: DetectionBox,
    pub inset: DynamicImage,
}

pub fn detect_dependent_sources(img: &DynamicImage) -> Vec<Detection> {
    let gray = GrayImage::from_dynamic(img);
    let (w, h) = img.dimensions();
    rhombus_candidates(&gray)
        .into_iter()
        .filter_map(|q| {
            let (x, y, bw, bh) = q.bounding_rect();
            let bbox = DetectionBox {
                x1: x - MARGIN,
                y1: y - MARGIN,
                x2: x + bw + MARGIN,
                y2: y + bh + MARGIN,
                kind: SourceKind::Dependent,
                origin: Origin::RuleBased,
                confidence: 1.0,
            }
            .clamped(w, h)?;
            let inset = crop_inset(img, &bbox).ok()?;
            Some(Detection { bbox, inset })
        })
        .collect()
}

pub fn decode_image(bytes: &[u8]) -> Result<DynamicImage, VisionError> {
    image::load_from_memory(bytes).map_err(|e| VisionError::Input(format!("undecodable image: {e}")))
}

pub fn open_image(path: &Path) -> Result<DynamicImage, VisionError> {
    image::open(path).map_err(|e| VisionError::Input(format!("{}: {e}", path.display())))
}

/// Sub-image covering the clamped box.
pub fn crop_inset(img: &DynamicImage, bbox: &DetectionBox) -> Result<DynamicImage, VisionError> {
    let (w, h) = img.dimensions();
    let b = bbox
        .clamped(w, h)
        .ok_or_else(|| VisionError::Input(format!("box {} has no area inside the image", bbox.xyxy())))?;
    Ok(img.crop_imm(b.x1 as u32, b.y1 as u32, b.width() as u32, b.height() as u32))
}

/// How the external detector is reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorEndpoint {
    /// `program args... <image>`; stdout lines `class x1 y1 x2 y2 confidence`.
    Command {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
    /// POST image bytes; response is a JSON list of detections.
    Http { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalDetectorClient {
    #[serde(flatten)]
    pub endpoint: DetectorEndpoint,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_detector_timeout")]
    pub timeout_secs: u64,
}

fn default_threshold() -> f64 {
    DEFAULT_CONFIDENCE_THRESHOLD
}

fn default_detector_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub class: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub confidence: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HttpDetection {
    Flat(RawDetection),
    Boxed {
        class: String,
        #[serde(alias = "bbox")]
        r#box: [f64; 4],
        confidence: f64,
    },
}

pub fn source_kind_for_class(class: &str) -> Option<SourceKind> {
    let c = class.to_ascii_lowercase();
    if c.contains("dependent") {
        Some(SourceKind::Dependent)
    } else if c.contains("voltage source") {
        Some(SourceKind::IndependentVoltage)
    } else if c.contains("current source") {
        Some(SourceKind::IndependentCurrent)
    } else {
        None
    }
}

/// Parses `class x1 y1 x2 y2 confidence` lines; class names may contain spaces.
pub fn parse_detector_lines(text: &str) -> Result<Vec<RawDetection>, VisionError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 6 {
            return Err(VisionError::Parse(format!("line {}: expected 6 fields: `{line}`", n + 1)));
        }
        let k = toks.len() - 5;
        let nums: Vec<f64> = toks[k..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| VisionError::Parse(format!("line {}: non-numeric field in `{line}`", n + 1)))?;
        out.push(RawDetection {
            class: toks[..k].join(" "),
            x1: nums[0],
            y1: nums[1],
            x2: nums[2],
            y2: nums[3],
            confidence: nums[4],
        });
    }
    Ok(out)
}

pub fn parse_detector_json(text: &str) -> Result<Vec<RawDetection>, VisionError> {
    let items: Vec<HttpDetection> =
        serde_json::from_str(text).map_err(|e| VisionError::Parse(e.to_string()))?;
    Ok(items
        .into_iter()
        .map(|d| match d {
            HttpDetection::Flat(r) => r,
            HttpDetection::Boxed {
                class,
                r#box: b,
                confidence,
            } => RawDetection {
                class,
                x1: b[0],
                y1: b[1],
                x2: b[2],
                y2: b[3],
                confidence,
            },
        })
        .collect())
}

impl ExternalDetectorClient {
    pub fn new(endpoint: DetectorEndpoint) -> Self {
        ExternalDetectorClient {
            endpoint,
            threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            timeout_secs: default_detector_timeout(),
        }
    }

    pub fn raw_detections(&self, image_path: &Path) -> Result<Vec<RawDetection>, VisionError> {
        match &self.endpoint {
            DetectorEndpoint::Command { program, args } => {
                let mut cmd = Command::new(program);
                cmd.args(args).arg(image_path);
                let out = crate::sim::run_with_timeout(cmd, Duration::from_secs(self.timeout_secs))
                    .map_err(|e| VisionError::Detector(format!("{}: {e}", program.display())))?;
                if let crate::sim::SimStatus::ExecFailure { exit_code, timed_out, .. } = out.status {
                    if timed_out || exit_code != Some(0) {
                        return Err(VisionError::Detector(format!(
                            "{} failed (exit {exit_code:?}, timed out {timed_out}): {}",
                            program.display(),
                            out.stderr.trim()
                        )));
                    }
                }
                parse_detector_lines(&out.stdout)
            }
            DetectorEndpoint::Http { url } => {
                let bytes = std::fs::read(image_path)
                    .map_err(|e| VisionError::Input(format!("{}: {e}", image_path.display())))?;
                let client = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(self.timeout_secs))
                    .build()
                    .map_err(|e| VisionError::Detector(e.to_string()))?;
                let resp = client
                    .post(url)
                    .header("content-type", "application/octet-stream")
                    .body(bytes)
                    .send()
                    .map_err(|e| VisionError::Detector(format!("{url}: {e}")))?;
                if !resp.status().is_success() {
                    return Err(VisionError::Detector(format!("{url}: HTTP {}", resp.status())));
                }
                let text = resp.text().map_err(|e| VisionError::Detector(e.to_string()))?;
                parse_detector_json(&text)
            }
        }
    }
}

/// Maps raw detections to boxes: unknown classes and low confidences are
/// dropped, the margin is applied and boxes are clamped to the image.
pub fn to_boxes(raw: &[RawDetection], threshold: f64, width: u32, height: u32) -> Vec<DetectionBox> {
    raw.iter()
        .filter(|r| r.confidence >= threshold)
        .filter_map(|r| {
            let kind = source_kind_for_class(&r.class)?;
            DetectionBox {
                x1: r.x1.floor() as i64 - MARGIN,
                y1: r.y1.floor() as i64 - MARGIN,
                x2: r.x2.ceil() as i64 + MARGIN,
                y2: r.y2.ceil() as i64 + MARGIN,
                kind,
                origin: Origin::ExternalDetector,
                confidence: r.confidence.clamp(0.0, 1.0),
            }
            .clamped(width, height)
        })
        .collect()
}

pub fn detect_independent_sources(
    image_path: &Path,
    detector: &ExternalDetectorClient,
) -> Result<Vec<Detection>, VisionError> {
    let img = open_image(image_path)?;
    let raw = detector.raw_detections(image_path)?;
    let (w, h) = img.dimensions();
    to_boxes(&raw, detector.threshold, w, h)
        .into_iter()
        .map(|bbox| Ok(Detection { inset: crop_inset(&img, &bbox)?, bbox }))
        .collect()
}

/// PNG encoding of an inset for attachments.
pub fn encode_png(img: &DynamicImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    buf.into_inner()
}
