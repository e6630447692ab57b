//! JSON dataset manifest: identities, per-sample files and split tags.
//!
//! Paths are relative to the directory holding `manifest.json`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{FaceStyle, SynthConfig};
use super::Sample;
use crate::array_file;
use crate::audio::{FeatureConfig, MfccFeature};
use crate::error::{Error, Result};
use crate::geometry::{BlinkPair, IndexGroups, LandmarkSet, PoseTriple};
use crate::reenact::FaceImage;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityEntry {
    pub name: String,
    /// Present for synthetic identities; enables the oracle detector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<FaceStyle>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub identity: String,
    pub frame_index: usize,
    pub split: Split,
    /// `[T, C]` array file.
    pub mfcc: String,
    /// `[N, 2]` array file of normalized coordinates.
    pub landmarks: String,
    /// RGB PNG.
    pub face: String,
    pub pose: PoseTriple,
    pub blink: BlinkPair,
    /// Latent mouth openness of synthetic samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mouth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub pipeline_version: String,
    pub resolution: usize,
    pub landmark_count: usize,
    pub groups: IndexGroups,
    pub features: FeatureConfig,
    pub identities: Vec<IdentityEntry>,
    pub samples: Vec<SampleRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

impl DatasetManifest {
    /// Accepts the manifest file or its directory.
    pub fn manifest_path(path: &Path) -> PathBuf {
        if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        }
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    /// Loads and validates; returns the manifest and its root directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let file = Self::manifest_path(path);
        let m: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(&file)?)?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate(&root)?;
        Ok((m, root))
    }

    pub fn validate(&self, root: &Path) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "manifest schema {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.groups.validate(self.landmark_count)?;
        self.features.validate()?;
        let names: HashSet<&str> = self.identities.iter().map(|i| i.name.as_str()).collect();
        if names.len() != self.identities.len() {
            return Err(Error::Format("duplicate identity names".into()));
        }
        let mut keys = HashSet::new();
        for s in &self.samples {
            if !names.contains(s.identity.as_str()) {
                return Err(Error::Format(format!("sample refers to unknown identity {:?}", s.identity)));
            }
            if !keys.insert((s.identity.as_str(), s.frame_index)) {
                return Err(Error::Format(format!(
                    "duplicate sample {} frame {}",
                    s.identity, s.frame_index
                )));
            }
            for f in [&s.mfcc, &s.landmarks, &s.face] {
                if !root.join(f).is_file() {
                    return Err(Error::Format(format!("missing sample file {f}")));
                }
            }
        }
        Ok(())
    }

    pub fn identity(&self, name: &str) -> Option<&IdentityEntry> {
        self.identities.iter().find(|i| i.name == name)
    }

    /// Sample indices in a split, optionally restricted to one identity, in manifest order.
    pub fn indices(&self, split: Split, identity: Option<&str>) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split && identity.map_or(true, |n| s.identity == n))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn load_sample(&self, root: &Path, index: usize) -> Result<Sample> {
        let r = self
            .samples
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("no sample {index}")))?;
        let mfcc = array_file::load(&root.join(&r.mfcc))?;
        if mfcc.shape != [self.features.n_fft_frames, self.features.n_mfcc] {
            return Err(Error::Shape(format!("{}: mfcc shape {:?}", r.mfcc, mfcc.shape)));
        }
        let lm = array_file::load(&root.join(&r.landmarks))?;
        if lm.shape != [self.landmark_count, 2] {
            return Err(Error::Shape(format!("{}: landmark shape {:?}", r.landmarks, lm.shape)));
        }
        let face = FaceImage::from_rgb8(&image::open(root.join(&r.face))?.to_rgb8())?;
        if face.size() != self.resolution {
            return Err(Error::Shape(format!("{}: face size {}", r.face, face.size())));
        }
        Ok(Sample {
            identity: r.identity.clone(),
            frame_index: r.frame_index,
            mfcc: MfccFeature {
                frames: self.features.n_fft_frames,
                coeffs: self.features.n_mfcc,
                values: mfcc.data,
                config_id: self.features.id(),
            },
            pose: r.pose,
            blink: r.blink,
            landmarks: LandmarkSet::new(
                lm.data.chunks(2).map(|c| [c[0], c[1]]).collect(),
                self.groups.clone(),
            )?,
            face,
        })
    }
}

/// Relative file names for sample `k` of an identity.
pub(crate) fn sample_paths(identity: &str, k: usize) -> (String, String, String) {
    (
        format!("{identity}/{k:05}.mfcc.apbt"),
        format!("{identity}/{k:05}.landmarks.apbt"),
        format!("{identity}/{k:05}.png"),
    )
}

/// Writes the three files of one sample under `root`.
pub(crate) fn write_sample_files(
    root: &Path,
    paths: &(String, String, String),
    mfcc: &MfccFeature,
    landmarks: &LandmarkSet,
    face: &FaceImage,
) -> Result<()> {
    array_file::save(
        &root.join(&paths.0),
        &[mfcc.frames, mfcc.coeffs],
        &mfcc.values,
        array_file::DType::F64,
    )?;
    array_file::save(
        &root.join(&paths.1),
        &[landmarks.len(), 2],
        &landmarks.flat(),
        array_file::DType::F64,
    )?;
    face.save_png(&root.join(&paths.2))
}

/// Deterministic per-identity split assignment of `n` samples.
pub(crate) fn assign_splits(n: usize, fractions: (f64, f64), seed: u64) -> Vec<Split> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * fractions.0).round() as usize;
    let n_val = ((n as f64) * fractions.1).round() as usize;
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}
