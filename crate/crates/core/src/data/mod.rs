//! Dataset layer: face cropping, blink ratios, the synthetic generator, the
//! on-disk manifest and deterministic batching.

pub mod batches;
pub mod manifest;
pub mod preprocess;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::audio::MfccFeature;
use crate::error::{Error, Result};
use crate::geometry::{BlinkPair, IndexGroups, LandmarkSet, PoseTriple};
use crate::reenact::FaceImage;

pub use batches::{epoch_batches, epoch_order, Batch, DatasetCache, SampleData};
pub use manifest::{DatasetManifest, IdentityEntry, SampleRecord, Split, MANIFEST_SCHEMA_VERSION};
pub use synth::{synth_dataset, FaceState, FaceStyle, OracleDetector, SynthConfig};

/// One fully loaded training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub identity: String,
    pub frame_index: usize,
    pub mfcc: MfccFeature,
    pub pose: PoseTriple,
    pub blink: BlinkPair,
    pub landmarks: LandmarkSet,
    pub face: FaceImage,
}

/// Square crop in frame pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
}

pub const CROP_SCALE: f64 = 1.4;

/// Square of side 1.4 × the longer bounding-box edge, centered on the box.
pub fn crop_box(points: &[[f64; 2]]) -> Result<CropBox> {
    if points.is_empty() {
        return Err(Error::EmptyLandmarks);
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::NonFinite("landmarks".into()));
        }
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let side = CROP_SCALE * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if side <= 0.0 {
        return Err(Error::InvalidArgument("landmark bounding box has zero size".into()));
    }
    let (cx, cy) = ((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0);
    Ok(CropBox {
        x0: cx - side / 2.0,
        y0: cy - side / 2.0,
        side,
    })
}

fn bilinear(frame: &image::RgbImage, x: f64, y: f64, c: usize) -> f64 {
    // x, y in pixel-index space; outside the frame reads black
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let at = |i: i64, j: i64| -> f64 {
        if i < 0 || j < 0 || i >= w || j >= h {
            0.0
        } else {
            frame.get_pixel(i as u32, j as u32).0[c] as f64
        }
    };
    let (i, j) = (fx as i64, fy as i64);
    (1.0 - ty) * ((1.0 - tx) * at(i, j) + tx * at(i + 1, j)) + ty * ((1.0 - tx) * at(i, j + 1) + tx * at(i + 1, j + 1))
}

/// Crops and resizes a face to `out_size²`, remapping landmarks (frame pixels) to `[0, 1]`.
pub fn crop_face(
    frame: &image::RgbImage,
    landmarks_px: &[[f64; 2]],
    groups: IndexGroups,
    out_size: usize,
) -> Result<(FaceImage, LandmarkSet)> {
    let b = crop_box(landmarks_px)?;
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    if !landmarks_px
        .iter()
        .any(|p| p[0] >= 0.0 && p[1] >= 0.0 && p[0] < w && p[1] < h)
    {
        return Err(Error::InvalidArgument("no landmark inside the frame".into()));
    }
    let scale = b.side / out_size as f64;
    let mut px = vec![0.0; 3 * out_size * out_size];
    for j in 0..out_size {
        let sy = b.y0 + (j as f64 + 0.5) * scale - 0.5;
        for i in 0..out_size {
            let sx = b.x0 + (i as f64 + 0.5) * scale - 0.5;
            for c in 0..3 {
                px[(c * out_size + j) * out_size + i] = bilinear(frame, sx, sy, c) / 127.5 - 1.0;
            }
        }
    }
    let points = landmarks_px
        .iter()
        .map(|p| [(p[0] - b.x0) / b.side, (p[1] - b.y0) / b.side])
        .collect();
    Ok((FaceImage::new(out_size, px)?, LandmarkSet::new(points, groups)?))
}

/// Eye height over width; scale invariant, so normalized or 256-scale inputs agree.
pub fn blink_ratio(eye_points: &[[f64; 2]]) -> Result<f64> {
    if eye_points.is_empty() {
        return Err(Error::EmptyLandmarks);
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in eye_points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let width = hi[0] - lo[0];
    if !(width > 0.0) {
        return Err(Error::DegenerateEye);
    }
    Ok((hi[1] - lo[1]) / width)
}

/// Per-eye blink ratios of a landmark set.
pub fn blink_pair(l: &LandmarkSet) -> Result<BlinkPair> {
    Ok(BlinkPair::new(
        blink_ratio(&l.group_points(&l.groups.left_eye))?,
        blink_ratio(&l.group_points(&l.groups.right_eye))?,
    ))
}
