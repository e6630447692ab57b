//! In-memory sample cache and deterministic shuffled batching.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::DatasetManifest;
use crate::audio::MfccFeature;
use crate::error::Result;
use crate::exec;
use crate::geometry::{BlinkPair, LandmarkSet, PoseTriple, PredictorInput};
use crate::nn::Tensor;
use crate::reenact::FaceImage;
use crate::render::{default_dilation, face_mask, rasterize, BinaryImage, MaskImage, POINT_RADIUS};

/// Positions into a [`DatasetCache`].
pub type Batch = Vec<usize>;

/// A loaded sample plus the landmark image and loss mask derived from it.
#[derive(Clone, Debug)]
pub struct SampleData {
    pub manifest_index: usize,
    pub identity: String,
    pub frame_index: usize,
    pub mfcc: MfccFeature,
    pub pose: PoseTriple,
    pub blink: BlinkPair,
    pub landmarks: LandmarkSet,
    pub face: FaceImage,
    pub landmark_image: BinaryImage,
    pub mask: MaskImage,
}

#[derive(Clone, Debug)]
pub struct DatasetCache {
    pub resolution: usize,
    pub samples: Vec<SampleData>,
}

impl DatasetCache {
    pub fn load(manifest: &DatasetManifest, root: &Path, indices: &[usize]) -> Result<Self> {
        let res = manifest.resolution;
        let loaded = exec::map_slice(indices, |&i| -> Result<SampleData> {
            let s = manifest.load_sample(root, i)?;
            let landmark_image = rasterize(&s.landmarks, res, POINT_RADIUS)?;
            let mask = face_mask(&s.landmarks, res, default_dilation(res))?;
            Ok(SampleData {
                manifest_index: i,
                identity: s.identity,
                frame_index: s.frame_index,
                mfcc: s.mfcc,
                pose: s.pose,
                blink: s.blink,
                landmarks: s.landmarks,
                face: s.face,
                landmark_image,
                mask,
            })
        });
        Ok(DatasetCache {
            resolution: res,
            samples: loaded.into_iter().collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn predictor_input(&self, batch: &[usize]) -> PredictorInput {
        let items: Vec<_> = batch
            .iter()
            .map(|&i| {
                let s = &self.samples[i];
                (&s.mfcc, s.pose, s.blink)
            })
            .collect();
        PredictorInput::from_samples(&items)
    }

    /// `[n, 2N, 1, 1]` normalized coordinates.
    pub fn landmark_targets(&self, batch: &[usize]) -> Tensor {
        let rows: Vec<Vec<f64>> = batch.iter().map(|&i| self.samples[i].landmarks.flat()).collect();
        let n2 = rows.first().map_or(0, Vec::len);
        Tensor::stack(&rows, [n2, 1, 1])
    }

    /// `[n, 1, R, R]` landmark images in ±1.
    pub fn landmark_images(&self, batch: &[usize]) -> Tensor {
        let r = self.resolution;
        let rows: Vec<Vec<f64>> = batch.iter().map(|&i| self.samples[i].landmark_image.to_signed()).collect();
        Tensor::stack(&rows, [1, r, r])
    }

    /// `[n, 3, R, R]` faces.
    pub fn faces(&self, batch: &[usize]) -> Tensor {
        let r = self.resolution;
        let rows: Vec<Vec<f64>> = batch.iter().map(|&i| self.samples[i].face.pixels().to_vec()).collect();
        Tensor::stack(&rows, [3, r, r])
    }

    /// `[n, 1, R, R]` 0/1 loss masks.
    pub fn masks(&self, batch: &[usize]) -> Tensor {
        let r = self.resolution;
        let rows: Vec<Vec<f64>> = batch.iter().map(|&i| self.samples[i].mask.to_mask_values()).collect();
        Tensor::stack(&rows, [1, r, r])
    }
}

/// Permutation of `0..n` keyed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let key = seed.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
    order
}

/// Shuffled batches for one epoch; the last partial batch is kept.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Batch> {
    epoch_order(n, seed, epoch)
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}
