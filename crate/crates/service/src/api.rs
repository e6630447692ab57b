//! Wire types of the `/v1` endpoints.

use apbface_core::geometry::{BlinkPair, PoseTriple};
use serde::{Deserialize, Serialize};

pub const API_VERSION: &str = "v1";

/// Sample encodings accepted for PCM audio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcmEncoding {
    /// Signed 16-bit little endian.
    #[default]
    S16le,
    /// IEEE 32-bit float little endian.
    F32le,
}

/// Mono PCM clip; featurized around its midpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcmAudio {
    /// Base64 (standard alphabet, padded) sample bytes.
    pub data: String,
    pub sample_rate: u32,
    #[serde(default)]
    pub encoding: PcmEncoding,
}

/// Precomputed `frames × coeffs` MFCC window, row-major by time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfccInput {
    pub frames: usize,
    pub coeffs: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReenactRequest {
    pub identity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pcm: Option<PcmAudio>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mfcc: Option<MfccInput>,
    pub pose: PoseTriple,
    pub blink: BlinkPair,
    /// Include the rasterized landmark image in the response.
    #[serde(default)]
    pub want_landmarks: bool,
}

/// Milliseconds spent per stage of one frame. `total` covers the whole request.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub features: f64,
    pub predictor: f64,
    pub rasterize: f64,
    pub reenactor: f64,
    pub encode: f64,
    pub total: f64,
}

impl StageLatency {
    pub fn stage_sum(&self) -> f64 {
        self.features + self.predictor + self.rasterize + self.reenactor + self.encode
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReenactResponse {
    pub version: String,
    pub identity: String,
    pub resolution: usize,
    /// Normalized `[x, y]` landmark coordinates.
    pub landmarks: Vec<[f64; 2]>,
    /// Base64 PNG, present when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark_image: Option<String>,
    /// Base64 RGB PNG.
    pub face_image: String,
    /// Driving conditions actually used for this frame.
    pub pose: PoseTriple,
    pub blink: BlinkPair,
    pub latency_ms: StageLatency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    /// One of `yaw`, `pitch`, `roll`, `blink` (both eyes).
    pub variable: String,
    pub range: [f64; 2],
    pub steps: usize,
    pub base: ReenactRequest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariable {
    Yaw,
    Pitch,
    Roll,
    Blink,
}

impl SweepVariable {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "yaw" => Some(SweepVariable::Yaw),
            "pitch" => Some(SweepVariable::Pitch),
            "roll" => Some(SweepVariable::Roll),
            "blink" => Some(SweepVariable::Blink),
            _ => None,
        }
    }

    /// Copies of the base conditions with only this variable replaced.
    pub fn apply(self, pose: PoseTriple, blink: BlinkPair, value: f64) -> (PoseTriple, BlinkPair) {
        let (mut p, mut b) = (pose, blink);
        match self {
            SweepVariable::Yaw => p.yaw = value,
            SweepVariable::Pitch => p.pitch = value,
            SweepVariable::Roll => p.roll = value,
            SweepVariable::Blink => b = BlinkPair::both(value),
        }
        (p, b)
    }
}

/// `steps` evenly spaced values from `lo` to `hi`; a single step is `lo`.
pub fn sweep_values(range: [f64; 2], steps: usize) -> Vec<f64> {
    let [lo, hi] = range;
    if steps == 1 {
        return vec![lo];
    }
    (0..steps)
        .map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64)
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub count: u64,
    /// Frames per second of time spent inside the stage.
    pub fps: f64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub parallel: bool,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            parallel: apbface_core::exec::parallel_available(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub version: String,
    pub uptime_s: f64,
    /// Inference requests received on `/v1/reenact` and `/v1/sweep`.
    pub request_count: u64,
    pub error_count: u64,
    pub frame_count: u64,
    pub stages: StageTable,
    pub environment: Environment,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTable {
    pub features: StageStats,
    pub predictor: StageStats,
    pub rasterize: StageStats,
    pub reenactor: StageStats,
    pub encode: StageStats,
    pub total: StageStats,
}
