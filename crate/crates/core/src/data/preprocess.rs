//! Builds a dataset from extracted video frames, per-frame annotations and
//! the soundtrack.
//!
//! Annotation file layout:
//!
//! ```json
//! {
//!   "identity": "speaker_a",
//!   "frames": [
//!     { "file": "000001.png", "frame_index": 0,
//!       "landmarks": [[x, y], ...], "pose": { "yaw": 0.0, "pitch": 0.0, "roll": 0.0 } }
//!   ]
//! }
//! ```
//!
//! Landmarks are in frame pixels; the pose is in radians.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{
    assign_splits, sample_paths, write_sample_files, DatasetManifest, IdentityEntry, SampleRecord,
    MANIFEST_SCHEMA_VERSION,
};
use super::{blink_pair, crop_face};
use crate::audio::{read_wav, resample, window_for_frame, FeatureConfig, MfccExtractor};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{IndexGroups, PoseTriple};
use crate::PIPELINE_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub file: String,
    pub frame_index: usize,
    pub landmarks: Vec<[f64; 2]>,
    pub pose: PoseTriple,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub identity: String,
    pub frames: Vec<FrameAnnotation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default = "default_split")]
    pub split: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

fn default_resolution() -> usize {
    256
}

fn default_split() -> (f64, f64) {
    (0.8, 0.1)
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            resolution: default_resolution(),
            features: FeatureConfig::default(),
            split: default_split(),
            seed: 0,
        }
    }
}

pub fn preprocess(
    frames_dir: &Path,
    annotations: &Path,
    audio: &Path,
    out_dir: &Path,
    cfg: &PreprocessConfig,
) -> Result<DatasetManifest> {
    cfg.features.validate()?;
    let ann: Annotations = serde_json::from_str(&std::fs::read_to_string(annotations)?)?;
    let n_points = ann
        .frames
        .first()
        .map(|f| f.landmarks.len())
        .ok_or_else(|| Error::InvalidArgument("annotations contain no frames".into()))?;
    let groups = IndexGroups::for_count(n_points).ok_or_else(|| {
        Error::config("preprocess", format!("no landmark layout for {n_points} points"))
    })?;
    let track = resample(&read_wav(audio)?, cfg.features.sample_rate)?;
    let extractor = MfccExtractor::new(&cfg.features)?;
    std::fs::create_dir_all(out_dir.join(&ann.identity))?;
    let splits = assign_splits(ann.frames.len(), cfg.split, cfg.seed);
    let records = exec::map_indexed(ann.frames.len(), |k| -> Result<SampleRecord> {
        let f = &ann.frames[k];
        if f.landmarks.len() != n_points {
            return Err(Error::Shape(format!("{}: {} landmarks, expected {n_points}", f.file, f.landmarks.len())));
        }
        let frame = image::open(frames_dir.join(&f.file))?.to_rgb8();
        let (face, landmarks) = crop_face(&frame, &f.landmarks, groups.clone(), cfg.resolution)?;
        let blink = blink_pair(&landmarks)?;
        let mfcc = extractor.extract(&window_for_frame(&track, f.frame_index, &cfg.features)?)?;
        let flagged = f.pose.out_of_range();
        if !flagged.is_empty() {
            tracing::warn!(frame = %f.file, components = ?flagged, "pose outside the usual range");
        }
        let paths = sample_paths(&ann.identity, f.frame_index);
        write_sample_files(out_dir, &paths, &mfcc, &landmarks, &face)?;
        Ok(SampleRecord {
            identity: ann.identity.clone(),
            frame_index: f.frame_index,
            split: splits[k],
            mfcc: paths.0,
            landmarks: paths.1,
            face: paths.2,
            pose: f.pose,
            blink,
            mouth: None,
        })
    });
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        pipeline_version: PIPELINE_VERSION.to_string(),
        resolution: cfg.resolution,
        landmark_count: n_points,
        groups,
        features: cfg.features.clone(),
        identities: vec![IdentityEntry {
            name: ann.identity.clone(),
            style: None,
        }],
        samples: records.into_iter().collect::<Result<_>>()?,
        synth: None,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}
