//! Both stages end to end: training per identity, generation from held-out
//! signals and evaluation with an analytic detector.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::MfccFeature;
use crate::checkpoint::Checkpoint;
use crate::data::{DatasetCache, DatasetManifest, OracleDetector, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{BlinkPair, LandmarkSet, PoseTriple, PredictorModel};
use crate::metrics::{evaluate_detailed, pearson, EvalSample, MetricsReport};
use crate::reenact::{FaceImage, ReenactorModel};
use crate::render::{rasterize, BinaryImage, POINT_RADIUS};
use crate::train::{
    mean_image_baseline, mean_landmark_baseline, predictor_ale, reenactor_masked_l1, train_predictor,
    train_reenactor, PredictorTrainer, ReenactorTrainer, RunOutput, TrainConfig, TrainHistory,
};

/// Inference pair for one identity. Parameters are never mutated after load.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityModels {
    pub identity: String,
    pub predictor: PredictorModel,
    pub reenactor: ReenactorModel,
}

/// Output of one pass through both stages.
#[derive(Clone, Debug)]
pub struct Generated {
    pub landmarks: LandmarkSet,
    pub landmark_image: BinaryImage,
    pub face: FaceImage,
}

impl IdentityModels {
    pub fn new(identity: &str, predictor: PredictorModel, reenactor: ReenactorModel) -> Result<Self> {
        if predictor.arch.resolution != reenactor.arch.resolution {
            return Err(Error::config(
                "pipeline",
                format!(
                    "predictor resolution {} differs from reenactor resolution {}",
                    predictor.arch.resolution, reenactor.arch.resolution
                ),
            ));
        }
        Ok(IdentityModels {
            identity: identity.to_string(),
            predictor,
            reenactor,
        })
    }

    pub fn resolution(&self) -> usize {
        self.reenactor.arch.resolution
    }

    pub fn load(identity: &str, predictor: &Path, reenactor: &Path) -> Result<Self> {
        let p = PredictorTrainer::from_checkpoint(&Checkpoint::load(predictor)?)?;
        let r = ReenactorTrainer::from_checkpoint(&Checkpoint::load(reenactor)?)?;
        Self::new(identity, p.model, r.model)
    }

    /// Loads `{identity}_predictor.ckpt` and `{identity}_reenactor.ckpt` from `dir`.
    pub fn load_dir(identity: &str, dir: &Path) -> Result<Self> {
        let (p, r) = checkpoint_paths(dir, identity);
        Self::load(identity, &p, &r)
    }

    pub fn predict(&self, mfcc: &MfccFeature, pose: PoseTriple, blink: BlinkPair) -> Result<LandmarkSet> {
        self.predictor.predict_landmarks(mfcc, pose, blink)
    }

    pub fn render(&self, landmarks: &LandmarkSet) -> Result<(BinaryImage, FaceImage)> {
        let img = rasterize(landmarks, self.resolution(), POINT_RADIUS)?;
        let face = self.reenactor.reenact(&img)?;
        Ok((img, face))
    }

    pub fn generate(&self, mfcc: &MfccFeature, pose: PoseTriple, blink: BlinkPair) -> Result<Generated> {
        let landmarks = self.predict(mfcc, pose, blink)?;
        let (landmark_image, face) = self.render(&landmarks)?;
        Ok(Generated {
            landmarks,
            landmark_image,
            face,
        })
    }
}

pub fn checkpoint_paths(dir: &Path, identity: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{identity}_predictor.ckpt")),
        dir.join(format!("{identity}_reenactor.ckpt")),
    )
}

/// Pearson correlation between driving and decoded signals over detected samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Controllability {
    pub n: usize,
    pub yaw: Option<f64>,
    pub pitch: Option<f64>,
    pub roll: Option<f64>,
    /// Left and right eyes pooled.
    pub blink: Option<f64>,
}

impl Controllability {
    /// Smallest of the four correlations; `None` if any is undefined.
    pub fn min(&self) -> Option<f64> {
        [self.yaw, self.pitch, self.roll, self.blink]
            .into_iter()
            .try_fold(f64::INFINITY, |m, v| v.map(|v| m.min(v)))
    }
}

#[derive(Default)]
struct SignalPairs {
    pose: [(Vec<f64>, Vec<f64>); 3],
    blink: (Vec<f64>, Vec<f64>),
}

impl SignalPairs {
    fn push(&mut self, driving: (PoseTriple, BlinkPair), decoded: (PoseTriple, BlinkPair)) {
        let (a, b) = (driving.0.to_array(), decoded.0.to_array());
        for k in 0..3 {
            self.pose[k].0.push(a[k]);
            self.pose[k].1.push(b[k]);
        }
        for (x, y) in driving.1.to_array().into_iter().zip(decoded.1.to_array()) {
            self.blink.0.push(x);
            self.blink.1.push(y);
        }
    }

    fn extend(&mut self, other: &SignalPairs) {
        for k in 0..3 {
            self.pose[k].0.extend(&other.pose[k].0);
            self.pose[k].1.extend(&other.pose[k].1);
        }
        self.blink.0.extend(&other.blink.0);
        self.blink.1.extend(&other.blink.1);
    }

    fn correlations(&self) -> Controllability {
        let r = |p: &(Vec<f64>, Vec<f64>)| pearson(&p.0, &p.1);
        Controllability {
            n: self.pose[0].0.len(),
            yaw: r(&self.pose[0]),
            pitch: r(&self.pose[1]),
            roll: r(&self.pose[2]),
            blink: r(&self.blink),
        }
    }
}

/// Evaluation of one identity's pair of models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub identity: String,
    /// Detector-based metrics on faces generated from held-out signals.
    pub generated: MetricsReport,
    pub controllability: Controllability,
    /// Validation landmark error of the predictor, pixels.
    pub val_ale: f64,
    pub mean_landmark_baseline: f64,
    /// Validation masked L1 of faces reenacted from ground-truth landmarks.
    pub val_masked_l1: f64,
    pub mean_image_baseline: f64,
    /// Controllability when this identity is driven by every other identity's held-out signals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_driven: Option<Controllability>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub pipeline_version: String,
    pub identities: Vec<IdentityReport>,
    /// Correlations over every identity's generated held-out samples.
    pub pooled: Controllability,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histories: Option<Vec<StageHistories>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageHistories {
    pub identity: String,
    pub predictor: TrainHistory,
    pub reenactor: TrainHistory,
}

pub fn split_cache(manifest: &DatasetManifest, root: &Path, split: Split, identity: &str) -> Result<DatasetCache> {
    DatasetCache::load(manifest, root, &manifest.indices(split, Some(identity)))
}

fn detector_for(manifest: &DatasetManifest, identity: &str) -> Result<OracleDetector> {
    let entry = manifest
        .identity(identity)
        .ok_or_else(|| Error::UnknownIdentity(identity.to_string()))?;
    let style = entry
        .style
        .clone()
        .ok_or_else(|| Error::InvalidArgument(format!("identity {identity} has no synthetic style to decode")))?;
    Ok(OracleDetector::new(style))
}

/// Generates faces for `models` from the held-out signals in `drive` and decodes them with `detector`.
fn generate_and_detect(
    models: &IdentityModels,
    drive: &DatasetCache,
    detector: &OracleDetector,
    with_reference: bool,
) -> Result<(MetricsReport, SignalPairs)> {
    let generated = exec::map_slice(&drive.samples, |s| models.generate(&s.mfcc, s.pose, s.blink));
    let samples = generated
        .into_iter()
        .zip(&drive.samples)
        .map(|(g, s)| {
            Ok(EvalSample {
                generated: g?.face,
                landmarks: s.landmarks.clone(),
                pose: s.pose,
                blink: s.blink,
                reference: with_reference.then(|| s.face.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (report, det) = evaluate_detailed(&samples, detector)?;
    let mut pairs = SignalPairs::default();
    for (s, d) in samples.iter().zip(&det.detections) {
        if let Some(d) = d {
            pairs.push((s.pose, s.blink), (d.pose, d.blink));
        }
    }
    Ok((report, pairs))
}

/// Evaluates trained models against a synthetic manifest: validation errors,
/// baselines, and decoded controllability on the test split.
pub fn evaluate_pipeline(
    models: &[IdentityModels],
    manifest: &DatasetManifest,
    root: &Path,
    cross_identity: bool,
) -> Result<PipelineReport> {
    let mut identities = Vec::new();
    let mut pooled = SignalPairs::default();
    let tests: Vec<DatasetCache> = models
        .iter()
        .map(|m| split_cache(manifest, root, Split::Test, &m.identity))
        .collect::<Result<_>>()?;
    for (m, test) in models.iter().zip(&tests) {
        let train = split_cache(manifest, root, Split::Train, &m.identity)?;
        let val = split_cache(manifest, root, Split::Val, &m.identity)?;
        if train.is_empty() || val.is_empty() || test.is_empty() {
            return Err(Error::InvalidArgument(format!("identity {} lacks a train, val or test split", m.identity)));
        }
        let detector = detector_for(manifest, &m.identity)?;
        let (generated, pairs) = generate_and_detect(m, test, &detector, true)?;
        pooled.extend(&pairs);
        let cross_driven = if cross_identity && models.len() > 1 {
            let mut cross = SignalPairs::default();
            for (other, drive) in models.iter().zip(&tests) {
                if other.identity != m.identity {
                    let (_, p) = generate_and_detect(m, drive, &detector, false)?;
                    cross.extend(&p);
                }
            }
            Some(cross.correlations())
        } else {
            None
        };
        let report = IdentityReport {
            identity: m.identity.clone(),
            generated,
            controllability: pairs.correlations(),
            val_ale: predictor_ale(&m.predictor, &val)?,
            mean_landmark_baseline: mean_landmark_baseline(&train, &val, m.resolution()),
            val_masked_l1: reenactor_masked_l1(&m.reenactor, &val)?,
            mean_image_baseline: mean_image_baseline(&train, &val)?,
            cross_driven,
        };
        tracing::info!(identity = %m.identity, val_ale = report.val_ale, masked_l1 = report.val_masked_l1, "evaluated");
        identities.push(report);
    }
    Ok(PipelineReport {
        pipeline_version: crate::PIPELINE_VERSION.to_string(),
        identities,
        pooled: pooled.correlations(),
        histories: None,
    })
}

/// Result of [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub models: Vec<IdentityModels>,
    pub report: PipelineReport,
}

/// Trains both stages for every identity (strictly one after the other) and evaluates.
/// With `out`, checkpoints, logs and sample grids are written there.
pub fn run_pipeline(
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    root: &Path,
    out: Option<&Path>,
) -> Result<PipelineRun> {
    cfg.validate()?;
    if cfg.predictor_arch.resolution != manifest.resolution || cfg.reenactor_arch.resolution != manifest.resolution {
        return Err(Error::config("pipeline", "architecture resolution differs from the dataset"));
    }
    let output = out.map(RunOutput::new).transpose()?;
    let mut models = Vec::new();
    let mut histories = Vec::new();
    for entry in &manifest.identities {
        let id = entry.name.as_str();
        let train = split_cache(manifest, root, Split::Train, id)?;
        let val = split_cache(manifest, root, Split::Val, id)?;
        let (p, ph) = train_predictor(cfg, &train, Some(&val), id, cfg.predictor_adversary, output.as_ref())?;
        let (r, rh) = train_reenactor(cfg, &train, Some(&val), id, output.as_ref())?;
        if let Some(o) = &output {
            let (pp, rp) = checkpoint_paths(&o.dir, id);
            p.to_checkpoint()?.save(&pp)?;
            r.to_checkpoint()?.save(&rp)?;
        }
        models.push(IdentityModels::new(id, p.model, r.model)?);
        histories.push(StageHistories {
            identity: id.to_string(),
            predictor: ph,
            reenactor: rh,
        });
    }
    let mut report = evaluate_pipeline(&models, manifest, root, true)?;
    report.histories = Some(histories);
    if let Some(o) = &output {
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(o.dir.join("report.json"), text + "\n")?;
    }
    Ok(PipelineRun { models, report })
}
