//! Landmark image rasterization and the dilated face mask.
//!
//! Pixel `(x, y)` has its center at integer coordinates. Normalized landmark
//! coordinates are clamped to `[0, 1]`, multiplied by the resolution and
//! clamped to `[0, resolution − 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;
use crate::nn::Tensor;

/// Square single-channel image with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryImage {
    size: usize,
    pixels: Vec<u8>,
}

/// Face-region mask; same representation as a landmark image.
pub type MaskImage = BinaryImage;

impl BinaryImage {
    pub fn new(size: usize) -> Self {
        BinaryImage {
            size,
            pixels: vec![0; size * size],
        }
    }

    pub fn filled(size: usize) -> Self {
        BinaryImage {
            size,
            pixels: vec![1; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.size + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize) {
        self.pixels[y * self.size + x] = 1;
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|p| **p != 0).count()
    }

    pub fn is_subset_of(&self, other: &BinaryImage) -> bool {
        self.size == other.size && self.pixels.iter().zip(&other.pixels).all(|(a, b)| *a <= *b)
    }

    /// `1 × size × size` values, white = 1, black = −1.
    pub fn to_signed(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| if p != 0 { 1.0 } else { -1.0 }).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 1, self.size, self.size], self.to_signed())
    }

    pub fn to_mask_values(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }

    pub fn to_gray(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.size as u32, self.size as u32, |x, y| {
            image::Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray().save(path)?;
        Ok(())
    }
}

fn scaled(l: &LandmarkSet, resolution: usize) -> Vec<[f64; 2]> {
    let s = resolution as f64;
    let hi = (resolution - 1) as f64;
    l.points
        .iter()
        .map(|p| {
            [
                (p[0].clamp(0.0, 1.0) * s).min(hi),
                (p[1].clamp(0.0, 1.0) * s).min(hi),
            ]
        })
        .collect()
}

/// Squared distance from `q` to segment `ab`.
fn segment_dist2(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (px, py) = (a[0] + t * dx - q[0], a[1] + t * dy - q[1]);
    px * px + py * py
}

/// Pixel range `[lo, hi]` covering `[a − r, b + r]`, clipped to the image.
fn span(a: f64, b: f64, r: f64, size: usize) -> Option<(usize, usize)> {
    let lo = (a.min(b) - r).ceil().max(0.0);
    let hi = (a.max(b) + r).floor().min((size - 1) as f64);
    (lo <= hi).then_some((lo as usize, hi as usize))
}

/// Disk radius, in pixels, used for landmark images fed to the reenactor.
pub const POINT_RADIUS: f64 = 1.0;

/// Landmark image: a filled disk per point and 1-px polylines within each group.
pub fn rasterize(l: &LandmarkSet, resolution: usize, point_radius: f64) -> Result<BinaryImage> {
    if resolution < 8 {
        return Err(Error::InvalidArgument("resolution must be at least 8".into()));
    }
    let mut img = BinaryImage::new(resolution);
    if l.is_empty() {
        return Ok(img);
    }
    let pts = scaled(l, resolution);
    let r2 = point_radius * point_radius;
    for p in &pts {
        let (Some((x0, x1)), Some((y0, y1))) = (
            span(p[0], p[0], point_radius, resolution),
            span(p[1], p[1], point_radius, resolution),
        ) else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - p[0], y as f64 - p[1]);
                if dx * dx + dy * dy <= r2 {
                    img.set(x, y);
                }
            }
        }
    }
    for (_, idx, closed) in l.groups.iter() {
        for (a, b) in group_segments(idx, closed) {
            draw_segment(&mut img, pts[a], pts[b]);
        }
    }
    Ok(img)
}

/// Consecutive index pairs of a group, wrapping around for closed outlines.
pub fn group_segments(idx: &[usize], closed: bool) -> Vec<(usize, usize)> {
    let mut segs: Vec<(usize, usize)> = idx.windows(2).map(|w| (w[0], w[1])).collect();
    if closed && idx.len() > 2 {
        segs.push((idx[idx.len() - 1], idx[0]));
    }
    segs
}

const HALF_LINE: f64 = 0.5;

fn draw_segment(img: &mut BinaryImage, a: [f64; 2], b: [f64; 2]) {
    let size = img.size();
    let (Some((x0, x1)), Some((y0, y1))) = (
        span(a[0], b[0], HALF_LINE, size),
        span(a[1], b[1], HALF_LINE, size),
    ) else {
        return;
    };
    for y in y0..=y1 {
        for x in x0..=x1 {
            if segment_dist2([x as f64, y as f64], a, b) <= HALF_LINE * HALF_LINE {
                img.set(x, y);
            }
        }
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise (in a y-down frame: clockwise on screen) convex hull, monotone chain.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], *p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], *p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn fill_convex(hull: &[[f64; 2]], size: usize) -> BinaryImage {
    let mut img = BinaryImage::new(size);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in hull {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let (Some((x0, x1)), Some((y0, y1))) = (span(lo[0], hi[0], 0.0, size), span(lo[1], hi[1], 0.0, size)) else {
        return img;
    };
    for y in y0..=y1 {
        for x in x0..=x1 {
            let q = [x as f64, y as f64];
            let inside = (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], q) >= 0.0);
            if inside {
                img.set(x, y);
            }
        }
    }
    img
}

/// Euclidean dilation by a disk of integer radius, via horizontal run expansion.
pub fn dilate(src: &BinaryImage, radius: usize) -> BinaryImage {
    let size = src.size();
    if radius == 0 {
        return src.clone();
    }
    let runs: Vec<Vec<(usize, usize)>> = (0..size)
        .map(|y| {
            let mut out = Vec::new();
            let mut x = 0;
            while x < size {
                if src.get(x, y) {
                    let start = x;
                    while x < size && src.get(x, y) {
                        x += 1;
                    }
                    out.push((start, x - 1));
                } else {
                    x += 1;
                }
            }
            out
        })
        .collect();
    let r = radius as i64;
    let half_widths: Vec<i64> = (-r..=r)
        .map(|dy| {
            let rem = r * r - dy * dy;
            let mut w = (rem as f64).sqrt() as i64;
            while w * w > rem {
                w -= 1;
            }
            while (w + 1) * (w + 1) <= rem {
                w += 1;
            }
            w
        })
        .collect();
    let mut out = BinaryImage::new(size);
    for y in 0..size as i64 {
        for (k, dy) in (-r..=r).enumerate() {
            let sy = y + dy;
            if sy < 0 || sy >= size as i64 {
                continue;
            }
            let w = half_widths[k];
            for &(a, b) in &runs[sy as usize] {
                let lo = (a as i64 - w).max(0) as usize;
                let hi = (b as i64 + w).min(size as i64 - 1) as usize;
                for x in lo..=hi {
                    out.set(x, y as usize);
                }
            }
        }
    }
    out
}

/// Convex hull of the landmarks filled white, then dilated by `dilation_radius` pixels.
pub fn face_mask(l: &LandmarkSet, resolution: usize, dilation_radius: usize) -> Result<MaskImage> {
    if resolution < 8 {
        return Err(Error::InvalidArgument("resolution must be at least 8".into()));
    }
    let pts = scaled(l, resolution);
    if pts.len() < 3 {
        return Err(Error::DegenerateHull);
    }
    let hull = convex_hull(&pts);
    let area2: f64 = (0..hull.len())
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    if hull.len() < 3 || area2.abs() < 1e-9 {
        return Err(Error::DegenerateHull);
    }
    let filled = fill_convex(&hull, resolution);
    Ok(dilate(&filled, dilation_radius))
}

pub fn default_dilation(resolution: usize) -> usize {
    resolution / 16
}
