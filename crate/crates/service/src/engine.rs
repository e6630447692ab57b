//! Request execution independent of the HTTP layer.
//!
//! Each identity's models sit behind their own mutex, so inference on one
//! instance is serialized while different identities run concurrently.
//! Parameters are never written after load.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use apbface_core::audio::{centered_window, AudioTrack, FeatureConfig, MfccExtractor, MfccFeature};
use apbface_core::geometry::{BlinkPair, PoseTriple};
use apbface_core::pipeline::IdentityModels;
use apbface_core::render::{rasterize, POINT_RADIUS};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{DynamicImage, ImageFormat};

use crate::api::{
    sweep_values, MfccInput, PcmAudio, PcmEncoding, ReenactRequest, ReenactResponse, StageLatency, StatsReport,
    SweepRequest, SweepVariable, API_VERSION,
};
use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::stats::Stats;

pub const MAX_SWEEP_STEPS: usize = 256;

enum Slot {
    Ready(Box<Mutex<IdentityModels>>),
    Unavailable(String),
}

pub struct Service {
    features: FeatureConfig,
    extractor: MfccExtractor,
    slots: BTreeMap<String, Slot>,
    stats: Mutex<Stats>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

fn internal(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(e.to_string())
}

fn png_base64(img: DynamicImage) -> Result<String, ServiceError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(internal)?;
    Ok(STANDARD.encode(buf.into_inner()))
}

fn decode_pcm(pcm: &PcmAudio) -> Result<AudioTrack, ServiceError> {
    let bad = |m: String| ServiceError::MalformedAudio(m);
    let bytes = STANDARD.decode(&pcm.data).map_err(|e| bad(format!("base64: {e}")))?;
    let samples: Vec<f64> = match pcm.encoding {
        PcmEncoding::S16le => {
            if bytes.len() % 2 != 0 {
                return Err(bad("s16le payload has an odd byte count".into()));
            }
            bytes
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                .collect()
        }
        PcmEncoding::F32le => {
            if bytes.len() % 4 != 0 {
                return Err(bad("f32le payload is not a multiple of 4 bytes".into()));
            }
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        }
    };
    if samples.is_empty() {
        return Err(bad("no samples".into()));
    }
    AudioTrack::new(samples, pcm.sample_rate).map_err(|e| bad(e.to_string()))
}

impl Service {
    /// Loads every declared identity. Identities whose checkpoints fail to load
    /// stay declared and answer 503.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let mut slots = BTreeMap::new();
        for (id, pair) in &cfg.identities {
            let slot = match IdentityModels::load(id, &pair.predictor, &pair.reenactor) {
                Ok(m) => Self::admit(&cfg.features, m),
                Err(e) => Slot::Unavailable(e.to_string()),
            };
            if let Slot::Unavailable(reason) = &slot {
                tracing::warn!(identity = %id, %reason, "identity not loaded");
            }
            slots.insert(id.clone(), slot);
        }
        Self::with_slots(cfg.features.clone(), slots)
    }

    pub fn from_models(features: FeatureConfig, models: Vec<IdentityModels>) -> Result<Self, ServiceError> {
        let slots = models
            .into_iter()
            .map(|m| (m.identity.clone(), Self::admit(&features, m)))
            .collect();
        Self::with_slots(features, slots)
    }

    fn admit(features: &FeatureConfig, m: IdentityModels) -> Slot {
        let arch = &m.predictor.arch;
        if arch.mfcc_frames != features.n_fft_frames || arch.mfcc_coeffs != features.n_mfcc {
            return Slot::Unavailable(format!(
                "predictor expects {}×{} MFCC, service features give {}×{}",
                arch.mfcc_frames, arch.mfcc_coeffs, features.n_fft_frames, features.n_mfcc
            ));
        }
        Slot::Ready(Box::new(Mutex::new(m)))
    }

    fn with_slots(features: FeatureConfig, slots: BTreeMap<String, Slot>) -> Result<Self, ServiceError> {
        let extractor = MfccExtractor::new(&features).map_err(|e| ServiceError::Config(e.to_string()))?;
        Ok(Service {
            features,
            extractor,
            slots,
            stats: Mutex::new(Stats::default()),
        })
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.features
    }

    /// Declared identities and whether their models are loaded.
    pub fn identities(&self) -> Vec<(String, bool)> {
        self.slots
            .iter()
            .map(|(id, s)| (id.clone(), matches!(s, Slot::Ready(_))))
            .collect()
    }

    pub fn stats(&self) -> StatsReport {
        self.lock_stats().report()
    }

    fn lock_stats(&self) -> MutexGuard<'_, Stats> {
        self.stats.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn models(&self, identity: &str) -> Result<MutexGuard<'_, IdentityModels>, ServiceError> {
        match self.slots.get(identity) {
            None => Err(ServiceError::UnknownIdentity(identity.to_string())),
            Some(Slot::Unavailable(reason)) => Err(ServiceError::ModelNotLoaded {
                identity: identity.to_string(),
                reason: reason.clone(),
            }),
            // Parameters are read-only, so a poisoned gate still guards valid data.
            Some(Slot::Ready(m)) => Ok(m.lock().unwrap_or_else(|e| e.into_inner())),
        }
    }

    fn featurize(&self, req: &ReenactRequest) -> Result<MfccFeature, ServiceError> {
        match (&req.pcm, &req.mfcc) {
            (Some(pcm), None) => {
                let track = decode_pcm(pcm)?;
                let window =
                    centered_window(&track, &self.features).map_err(|e| ServiceError::MalformedAudio(e.to_string()))?;
                self.extractor
                    .extract(&window)
                    .map_err(|e| ServiceError::MalformedAudio(e.to_string()))
            }
            (None, Some(MfccInput { frames, coeffs, values })) => {
                let f = MfccFeature {
                    frames: *frames,
                    coeffs: *coeffs,
                    values: values.clone(),
                    config_id: self.features.id(),
                };
                f.check(&self.features)
                    .map_err(|e| ServiceError::MalformedAudio(e.to_string()))?;
                Ok(f)
            }
            (Some(_), Some(_)) => Err(ServiceError::MalformedAudio(
                "give exactly one of pcm and mfcc, not both".into(),
            )),
            (None, None) => Err(ServiceError::MalformedAudio("give exactly one of pcm and mfcc".into())),
        }
    }

    fn check_conditions(pose: &PoseTriple, blink: &BlinkPair) -> Result<(), ServiceError> {
        pose.validate()
            .and_then(|_| blink.validate())
            .map_err(|e| ServiceError::InvalidRequest(e.to_string()))
    }

    /// Predict, rasterize, reenact and encode one frame. `started` marks the
    /// beginning of the work charged to this frame.
    fn frame(
        models: &IdentityModels,
        mfcc: &MfccFeature,
        pose: PoseTriple,
        blink: BlinkPair,
        want_landmarks: bool,
        started: Instant,
        features_ms: f64,
    ) -> Result<ReenactResponse, ServiceError> {
        let t = Instant::now();
        let landmarks = models.predict(mfcc, pose, blink).map_err(internal)?;
        let predictor = ms(t);

        let t = Instant::now();
        let img = rasterize(&landmarks, models.resolution(), POINT_RADIUS).map_err(internal)?;
        let rasterize_ms = ms(t);

        let t = Instant::now();
        let face = models.reenactor.reenact(&img).map_err(internal)?;
        let reenactor = ms(t);

        let t = Instant::now();
        let face_image = png_base64(DynamicImage::ImageRgb8(face.to_rgb8()))?;
        let landmark_image = if want_landmarks {
            Some(png_base64(DynamicImage::ImageLuma8(img.to_gray()))?)
        } else {
            None
        };
        let encode = ms(t);

        Ok(ReenactResponse {
            version: API_VERSION.to_string(),
            identity: models.identity.clone(),
            resolution: models.resolution(),
            landmarks: landmarks.points,
            landmark_image,
            face_image,
            pose,
            blink,
            latency_ms: StageLatency {
                features: features_ms,
                predictor,
                rasterize: rasterize_ms,
                reenactor,
                encode,
                total: ms(started),
            },
        })
    }

    pub fn reenact(&self, req: &ReenactRequest) -> Result<ReenactResponse, ServiceError> {
        self.lock_stats().request();
        let out = self.reenact_inner(req);
        let mut stats = self.lock_stats();
        match &out {
            Ok(r) => stats.frame(&r.latency_ms, true),
            Err(_) => stats.error(),
        }
        out
    }

    fn reenact_inner(&self, req: &ReenactRequest) -> Result<ReenactResponse, ServiceError> {
        let started = Instant::now();
        let models = self.models(&req.identity)?;
        Self::check_conditions(&req.pose, &req.blink)?;
        let t = Instant::now();
        let mfcc = self.featurize(req)?;
        let features_ms = ms(t);
        Self::frame(&models, &mfcc, req.pose, req.blink, req.want_landmarks, started, features_ms)
    }

    /// Frames in sweep order, varying one input and holding the rest at `base`.
    pub fn sweep(&self, req: &SweepRequest) -> Result<Vec<ReenactResponse>, ServiceError> {
        self.lock_stats().request();
        let out = self.sweep_inner(req);
        let mut stats = self.lock_stats();
        match &out {
            Ok(frames) => {
                for (k, f) in frames.iter().enumerate() {
                    stats.frame(&f.latency_ms, k == 0);
                }
            }
            Err(_) => stats.error(),
        }
        out
    }

    fn sweep_inner(&self, req: &SweepRequest) -> Result<Vec<ReenactResponse>, ServiceError> {
        let started = Instant::now();
        let var = SweepVariable::parse(&req.variable).ok_or_else(|| ServiceError::UnknownVariable(req.variable.clone()))?;
        if req.steps == 0 || req.steps > MAX_SWEEP_STEPS {
            return Err(ServiceError::InvalidRequest(format!(
                "steps must be in 1..={MAX_SWEEP_STEPS}, got {}",
                req.steps
            )));
        }
        if !req.range.iter().all(|v| v.is_finite()) {
            return Err(ServiceError::InvalidRequest("range must be finite".into()));
        }
        let base = &req.base;
        let models = self.models(&base.identity)?;
        let values = sweep_values(req.range, req.steps);
        for &v in &values {
            let (p, b) = var.apply(base.pose, base.blink, v);
            Self::check_conditions(&p, &b)?;
        }
        let t = Instant::now();
        let mfcc = self.featurize(base)?;
        let mut features_ms = ms(t);

        // The shared featurization is charged to the first frame.
        let mut frame_start = started;
        let mut frames = Vec::with_capacity(values.len());
        for v in values {
            let (p, b) = var.apply(base.pose, base.blink, v);
            frames.push(Self::frame(&models, &mfcc, p, b, base.want_landmarks, frame_start, features_ms)?);
            features_ms = 0.0;
            frame_start = Instant::now();
        }
        Ok(frames)
    }
}
