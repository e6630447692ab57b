//! Procedural talking faces with a known generating process.
//!
//! A latent mouth openness `m ∈ [0, 1]` sets the frequency of a sine tone in
//! the audio window (`base + span·m` Hz) and the mouth height. Head pose
//! rotates a small 3-D layout that is projected orthographically, and the
//! per-eye blink ratio sets the eye heights. The face image is a smooth
//! function of the same state, so [`OracleDetector`] can recover the state
//! from pixels by least squares.

use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use std::path::Path;

use super::manifest::{
    assign_splits, sample_paths, write_sample_files, DatasetManifest, IdentityEntry, SampleRecord,
    MANIFEST_SCHEMA_VERSION,
};
use crate::audio::{AudioTrack, FeatureConfig, MfccExtractor};
use crate::exec;
use crate::error::{Error, Result};
use crate::geometry::{
    BlinkPair, IndexGroups, LandmarkSet, PoseTriple, PITCH_RANGE, ROLL_RANGE, YAW_RANGE,
};
use crate::metrics::{Detection, DetectorInterface};
use crate::reenact::FaceImage;
use crate::PIPELINE_VERSION;

/// Appearance and geometry of one synthetic identity, in normalized crop units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceStyle {
    pub background: [f64; 3],
    pub skin: [f64; 3],
    pub eye: [f64; 3],
    pub mouth: [f64; 3],
    pub face_half_width: f64,
    pub face_half_height: f64,
    pub edge_softness: f64,
    pub eye_x: f64,
    pub eye_y: f64,
    pub eye_z: f64,
    pub eye_width: f64,
    pub eye_sigma_x: f64,
    pub eye_sigma_y0: f64,
    /// Eye blob height is `eye_sigma_y0 · exp(gain · blink)`.
    pub eye_sigma_y_gain: f64,
    pub mouth_y: f64,
    pub mouth_z: f64,
    pub mouth_half_width: f64,
    pub mouth_height_min: f64,
    pub mouth_height_range: f64,
    pub mouth_sigma_x: f64,
    pub mouth_sigma_y0: f64,
    /// Mouth blob height is `mouth_sigma_y0 · exp(gain · m)`.
    pub mouth_sigma_y_gain: f64,
    pub jaw_z: f64,
}

impl FaceStyle {
    /// Deterministic style for identity `index` under `seed`.
    pub fn generate(seed: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5EED_F00D_u64.wrapping_mul(index as u64 + 1)));
        let mut jitter = |base: f64, spread: f64| base + rng.gen_range(-spread..=spread);
        let background = [jitter(-0.6, 0.3), jitter(-0.4, 0.3), jitter(-0.2, 0.3)];
        let skin = [jitter(0.55, 0.25), jitter(0.25, 0.2), jitter(0.0, 0.2)];
        let eye = [jitter(-0.8, 0.1), jitter(-0.75, 0.1), jitter(-0.6, 0.15)];
        let mouth = [jitter(0.1, 0.15), jitter(-0.7, 0.1), jitter(-0.55, 0.1)];
        FaceStyle {
            background,
            skin,
            eye,
            mouth,
            face_half_width: jitter(0.31, 0.02),
            face_half_height: jitter(0.40, 0.02),
            edge_softness: 0.03,
            eye_x: jitter(0.13, 0.01),
            eye_y: jitter(-0.09, 0.01),
            eye_z: -0.30,
            eye_width: 0.14,
            eye_sigma_x: 0.05,
            eye_sigma_y0: 0.02,
            eye_sigma_y_gain: 2.2,
            mouth_y: jitter(0.18, 0.01),
            mouth_z: -0.26,
            mouth_half_width: jitter(0.09, 0.01),
            mouth_height_min: 0.02,
            mouth_height_range: 0.08,
            mouth_sigma_x: 0.07,
            mouth_sigma_y0: 0.015,
            mouth_sigma_y_gain: 1.4,
            jaw_z: -0.12,
        }
    }
}

/// Latent state behind one synthetic frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceState {
    pub mouth: f64,
    pub pose: PoseTriple,
    pub blink: BlinkPair,
}

impl FaceState {
    fn to_vec(self) -> Vector6<f64> {
        Vector6::new(
            self.mouth,
            self.pose.yaw,
            self.pose.pitch,
            self.pose.roll,
            self.blink.left,
            self.blink.right,
        )
    }

    fn from_vec(v: &Vector6<f64>) -> Self {
        FaceState {
            mouth: v[0],
            pose: PoseTriple::new(v[1], v[2], v[3]),
            blink: BlinkPair::new(v[4], v[5]),
        }
    }
}

/// Orthographic projection of a head-frame point rotated by `Rz(roll)·Rx(pitch)·Ry(yaw)`.
pub fn project(p: [f64; 3], pose: &PoseTriple) -> [f64; 2] {
    let (sy, cy) = pose.yaw.sin_cos();
    let (sp, cp) = pose.pitch.sin_cos();
    let (sr, cr) = pose.roll.sin_cos();
    let x1 = p[0] * cy + p[2] * sy;
    let z1 = -p[0] * sy + p[2] * cy;
    let y2 = p[1] * cp - z1 * sp;
    let x3 = x1 * cr - y2 * sr;
    let y3 = x1 * sr + y2 * cr;
    [0.5 + x3, 0.5 + y3]
}

struct Anchors {
    left_eye: [f64; 2],
    right_eye: [f64; 2],
    mouth: [f64; 2],
}

fn anchors(style: &FaceStyle, pose: &PoseTriple) -> Anchors {
    Anchors {
        left_eye: project([-style.eye_x, style.eye_y, style.eye_z], pose),
        right_eye: project([style.eye_x, style.eye_y, style.eye_z], pose),
        mouth: project([0.0, style.mouth_y, style.mouth_z], pose),
    }
}

/// The 20-point layout for a state: jaw contour, two eye diamonds, mouth hexagon.
pub fn synth_landmarks(style: &FaceStyle, state: &FaceState) -> LandmarkSet {
    let a = anchors(style, &state.pose);
    let mut pts = Vec::with_capacity(20);
    for k in 0..6 {
        let t = std::f64::consts::PI * k as f64 / 5.0;
        let p = [
            style.face_half_width * t.cos(),
            style.face_half_height * t.sin(),
            style.jaw_z * t.sin(),
        ];
        pts.push(project(p, &state.pose));
    }
    let w = style.eye_width;
    for (c, b) in [(a.left_eye, state.blink.left), (a.right_eye, state.blink.right)] {
        let h = b * w;
        pts.push([c[0] - w / 2.0, c[1]]);
        pts.push([c[0], c[1] - h / 2.0]);
        pts.push([c[0] + w / 2.0, c[1]]);
        pts.push([c[0], c[1] + h / 2.0]);
    }
    let (mw, mh) = (
        style.mouth_half_width,
        style.mouth_height_min + state.mouth * style.mouth_height_range,
    );
    let c = a.mouth;
    pts.push([c[0] - mw, c[1]]);
    pts.push([c[0] - mw / 2.0, c[1] - mh / 2.0]);
    pts.push([c[0] + mw / 2.0, c[1] - mh / 2.0]);
    pts.push([c[0] + mw, c[1]]);
    pts.push([c[0] + mw / 2.0, c[1] + mh / 2.0]);
    pts.push([c[0] - mw / 2.0, c[1] + mh / 2.0]);
    LandmarkSet {
        points: pts,
        groups: IndexGroups::toy20(),
    }
}

fn blend(dst: &mut [f64; 3], color: &[f64; 3], t: f64) {
    for c in 0..3 {
        dst[c] += t * (color[c] - dst[c]);
    }
}

/// Smooth rendering of a state at `resolution` pixels.
pub fn render_face(style: &FaceStyle, state: &FaceState, resolution: usize) -> FaceImage {
    let a = anchors(style, &state.pose);
    let (sr, cr) = state.pose.roll.sin_cos();
    let n = resolution;
    let mut px = vec![0.0; 3 * n * n];
    // exponential height maps keep the blob heights positive and injective
    let eye_sy = [
        style.eye_sigma_y0 * (style.eye_sigma_y_gain * state.blink.left).exp(),
        style.eye_sigma_y0 * (style.eye_sigma_y_gain * state.blink.right).exp(),
    ];
    let mouth_sy = style.mouth_sigma_y0 * (style.mouth_sigma_y_gain * state.mouth).exp();
    let gauss = |u: f64, v: f64, c: [f64; 2], sx: f64, sy: f64| {
        let dx = (u - c[0]) / sx;
        let dy = (v - c[1]) / sy;
        (-0.5 * (dx * dx + dy * dy)).exp()
    };
    for y in 0..n {
        let v = (y as f64 + 0.5) / n as f64;
        for x in 0..n {
            let u = (x as f64 + 0.5) / n as f64;
            let (dx, dy) = (u - 0.5, v - 0.5);
            let lx = dx * cr + dy * sr;
            let ly = -dx * sr + dy * cr;
            let rho = ((lx / style.face_half_width).powi(2) + (ly / style.face_half_height).powi(2)).sqrt();
            let f = 1.0 / (1.0 + (-(1.0 - rho) / style.edge_softness).exp());
            let mut col = style.background;
            blend(&mut col, &style.skin, f);
            blend(&mut col, &style.eye, gauss(u, v, a.left_eye, style.eye_sigma_x, eye_sy[0]));
            blend(&mut col, &style.eye, gauss(u, v, a.right_eye, style.eye_sigma_x, eye_sy[1]));
            blend(&mut col, &style.mouth, gauss(u, v, a.mouth, style.mouth_sigma_x, mouth_sy));
            for c in 0..3 {
                px[(c * n + y) * n + x] = col[c];
            }
        }
    }
    FaceImage::new(n, px).expect("rendered face is finite")
}

/// Audio-encoding rule for the latent mouth openness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioRule {
    pub base_hz: f64,
    pub span_hz: f64,
    pub amplitude: (f64, f64),
}

impl Default for AudioRule {
    fn default() -> Self {
        AudioRule {
            base_hz: 200.0,
            span_hz: 600.0,
            amplitude: (0.3, 0.7),
        }
    }
}

impl AudioRule {
    pub fn frequency(&self, mouth: f64) -> f64 {
        self.base_hz + self.span_hz * mouth
    }

    pub fn window(&self, mouth: f64, amplitude: f64, phase: f64, cfg: &FeatureConfig) -> AudioTrack {
        AudioTrack::sine(self.frequency(mouth), amplitude, phase, cfg.window_len(), cfg.sample_rate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Total samples, split evenly across identities.
    pub n_samples: usize,
    pub n_identities: usize,
    pub resolution: usize,
    pub landmark_count: usize,
    pub seed: u64,
    #[serde(default)]
    pub audio: AudioRule,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default = "default_blink_max")]
    pub blink_max: f64,
    /// Train and validation fractions; the rest is test.
    #[serde(default = "default_split")]
    pub split: (f64, f64),
}

fn default_blink_max() -> f64 {
    0.5
}

fn default_split() -> (f64, f64) {
    (0.8, 0.1)
}

impl SynthConfig {
    pub fn toy(seed: u64) -> Self {
        SynthConfig {
            n_samples: 2000,
            n_identities: 2,
            resolution: 64,
            landmark_count: 20,
            seed,
            audio: AudioRule::default(),
            features: FeatureConfig::default(),
            blink_max: default_blink_max(),
            split: default_split(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.landmark_count != 20 {
            return Err(Error::config("synth", "the synthetic layout has exactly 20 landmarks"));
        }
        if self.n_identities == 0 || self.n_samples < self.n_identities {
            return Err(Error::config("synth", "need at least one sample per identity"));
        }
        if !(16..=256).contains(&self.resolution) {
            return Err(Error::config("synth", "resolution must be in 16..=256"));
        }
        let (a, b) = self.split;
        if !(a > 0.0 && b >= 0.0 && a + b <= 1.0) {
            return Err(Error::config("synth", "split fractions must be positive and sum to at most 1"));
        }
        if !(self.blink_max > 0.0 && self.blink_max <= 1.0) {
            return Err(Error::config("synth", "blink_max must be in (0, 1]"));
        }
        self.features.validate()
    }

    pub fn identity_name(i: usize) -> String {
        format!("id{i}")
    }

    pub fn samples_for(&self, identity: usize) -> usize {
        let base = self.n_samples / self.n_identities;
        base + usize::from(identity < self.n_samples % self.n_identities)
    }
}

/// One drawn synthetic sample before featurization.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDraw {
    pub state: FaceState,
    pub amplitude: f64,
    pub phase: f64,
}

/// Draws the latent state of sample `index` of `identity`; independent of other samples.
pub fn draw_sample(cfg: &SynthConfig, identity: usize, index: usize) -> SynthDraw {
    let key = cfg.seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((identity as u64) << 40)
        .wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let state = FaceState {
        mouth: rng.gen_range(0.0..=1.0),
        pose: PoseTriple::new(
            rng.gen_range(YAW_RANGE.0..=YAW_RANGE.1),
            rng.gen_range(PITCH_RANGE.0..=PITCH_RANGE.1),
            rng.gen_range(ROLL_RANGE.0..=ROLL_RANGE.1),
        ),
        blink: BlinkPair::new(rng.gen_range(0.0..=cfg.blink_max), rng.gen_range(0.0..=cfg.blink_max)),
    };
    SynthDraw {
        state,
        amplitude: rng.gen_range(cfg.audio.amplitude.0..=cfg.audio.amplitude.1),
        phase: rng.gen_range(0.0..std::f64::consts::TAU),
    }
}

/// Recovers the latent state of a synthetic identity from its pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleDetector {
    pub style: FaceStyle,
    /// Largest RMS pixel residual still counted as a detection.
    pub max_rms: f64,
}

impl OracleDetector {
    pub fn new(style: FaceStyle) -> Self {
        OracleDetector { style, max_rms: 0.15 }
    }

    /// Best-fit latent state and the RMS residual of its rendering.
    pub fn fit(&self, face: &FaceImage) -> Option<(FaceState, f64)> {
        let init = self.initial_state(face)?;
        let (state, rms) = self.refine(face, init);
        Some((state, rms))
    }

    fn unmix(&self, face: &FaceImage) -> (Vec<f64>, Vec<f64>) {
        // Per-pixel least squares: pixel − skin ≈ e·(eye − skin) + q·(mouth − skin).
        let s = &self.style;
        let de: Vec<f64> = (0..3).map(|c| s.eye[c] - s.skin[c]).collect();
        let dm: Vec<f64> = (0..3).map(|c| s.mouth[c] - s.skin[c]).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (a11, a12, a22) = (dot(&de, &de), dot(&de, &dm), dot(&dm, &dm));
        let det = a11 * a22 - a12 * a12;
        let n = face.size();
        let mut e = vec![0.0; n * n];
        let mut q = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let r: Vec<f64> = (0..3).map(|c| face.get(c, x, y) - s.skin[c]).collect();
                let (b1, b2) = (dot(&r, &de), dot(&r, &dm));
                let (ev, qv) = ((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det);
                // keep only pixels inside the face that the two-color model explains
                let u = (x as f64 + 0.5) / n as f64 - 0.5;
                let v = (y as f64 + 0.5) / n as f64 - 0.5;
                let off: f64 = (0..3).map(|c| (r[c] - ev * de[c] - qv * dm[c]).powi(2)).sum();
                if u * u + v * v < 0.3 * 0.3 && off < 0.01 {
                    e[y * n + x] = ev;
                    q[y * n + x] = qv;
                }
            }
        }
        (e, q)
    }

    fn initial_state(&self, face: &FaceImage) -> Option<FaceState> {
        let n = face.size();
        let (e, q) = self.unmix(face);
        let coord = |i: usize| [((i % n) as f64 + 0.5) / n as f64, ((i / n) as f64 + 0.5) / n as f64];
        let centroid = |w: &dyn Fn(usize) -> f64| {
            let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
            for i in 0..n * n {
                let wi = w(i);
                if wi > 0.0 {
                    let p = coord(i);
                    sx += wi * p[0];
                    sy += wi * p[1];
                    sw += wi;
                }
            }
            (sw > 1e-9).then(|| [sx / sw, sy / sw])
        };
        let thresh = 0.3;
        let mouth = centroid(&|i| if q[i] > thresh { q[i] } else { 0.0 })?;
        // two-means over eye-weighted pixels, seeded at the extremes in x
        let eye_px: Vec<usize> = (0..n * n).filter(|&i| e[i] > thresh).collect();
        if eye_px.len() < 2 {
            return None;
        }
        let xs = |i: &usize| coord(*i)[0];
        let lo = eye_px.iter().copied().min_by(|a, b| xs(a).total_cmp(&xs(b)))?;
        let hi = eye_px.iter().copied().max_by(|a, b| xs(a).total_cmp(&xs(b)))?;
        let (mut cl, mut cr) = (coord(lo), coord(hi));
        for _ in 0..10 {
            let d2 = |p: [f64; 2], c: [f64; 2]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            let left = |i: usize| d2(coord(i), cl) <= d2(coord(i), cr);
            let nl = centroid(&|i| if e[i] > thresh && left(i) { e[i] } else { 0.0 })?;
            let nr = centroid(&|i| if e[i] > thresh && !left(i) { e[i] } else { 0.0 })?;
            cl = nl;
            cr = nr;
        }
        // geometric pose fit to the three anchors
        let target = [cl[0], cl[1], cr[0], cr[1], mouth[0], mouth[1]];
        let mut p = [0.0f64; 3];
        let resid = |p: &[f64; 3]| {
            let a = anchors(&self.style, &PoseTriple::new(p[0], p[1], p[2]));
            let v = [a.left_eye[0], a.left_eye[1], a.right_eye[0], a.right_eye[1], a.mouth[0], a.mouth[1]];
            let mut r = [0.0; 6];
            for k in 0..6 {
                r[k] = v[k] - target[k];
            }
            r
        };
        for _ in 0..30 {
            let r0 = resid(&p);
            let mut jt = [[0.0; 6]; 3];
            for j in 0..3 {
                let h = 1e-6;
                let mut pp = p;
                pp[j] += h;
                let mut pm = p;
                pm[j] -= h;
                let (rp, rm) = (resid(&pp), resid(&pm));
                for k in 0..6 {
                    jt[j][k] = (rp[k] - rm[k]) / (2.0 * h);
                }
            }
            let mut a = nalgebra::Matrix3::<f64>::zeros();
            let mut g = nalgebra::Vector3::<f64>::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    a[(i, j)] = (0..6).map(|k| jt[i][k] * jt[j][k]).sum();
                }
                g[i] = (0..6).map(|k| jt[i][k] * r0[k]).sum();
                a[(i, i)] *= 1.0 + 1e-3;
            }
            let step = a.lu().solve(&(-g))?;
            for j in 0..3 {
                p[j] = (p[j] + step[j]).clamp(-1.2, 1.2);
            }
            if step.amax() < 1e-10 {
                break;
            }
        }
        Some(FaceState {
            mouth: 0.5,
            pose: PoseTriple::new(p[0], p[1], p[2]),
            blink: BlinkPair::both(0.25),
        })
    }

    fn residual(&self, face: &FaceImage, theta: &Vector6<f64>) -> Vec<f64> {
        let r = render_face(&self.style, &FaceState::from_vec(theta), face.size());
        r.pixels().iter().zip(face.pixels()).map(|(a, b)| a - b).collect()
    }

    fn refine(&self, face: &FaceImage, init: FaceState) -> (FaceState, f64) {
        let mut theta = init.to_vec();
        let mut r = self.residual(face, &theta);
        let mut cost: f64 = r.iter().map(|v| v * v).sum();
        let mut lambda = 1e-3;
        let h = 1e-6;
        for _ in 0..100 {
            let cols: Vec<Vec<f64>> = (0..6)
                .map(|j| {
                    let mut tp = theta;
                    tp[j] += h;
                    let mut tm = theta;
                    tm[j] -= h;
                    let rp = self.residual(face, &tp);
                    let rm = self.residual(face, &tm);
                    rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
                })
                .collect();
            let mut jtj = Matrix6::<f64>::zeros();
            let mut jtr = Vector6::<f64>::zeros();
            for i in 0..6 {
                for j in i..6 {
                    let v: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                    jtj[(i, j)] = v;
                    jtj[(j, i)] = v;
                }
                jtr[i] = cols[i].iter().zip(&r).map(|(a, b)| a * b).sum();
            }
            let mut improved = false;
            while lambda < 1e12 {
                let mut a = jtj;
                for i in 0..6 {
                    a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
                }
                let Some(step) = a.lu().solve(&(-jtr)) else {
                    lambda *= 4.0;
                    continue;
                };
                let cand = theta + step;
                let rc = self.residual(face, &cand);
                let cc: f64 = rc.iter().map(|v| v * v).sum();
                if cc <= cost {
                    let small = step.amax() < 1e-12;
                    theta = cand;
                    r = rc;
                    cost = cc;
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = !small;
                    break;
                }
                lambda *= 4.0;
            }
            if !improved {
                break;
            }
        }
        let rms = (cost / r.len() as f64).sqrt();
        (FaceState::from_vec(&theta), rms)
    }
}

impl DetectorInterface for OracleDetector {
    fn detect(&self, face: &FaceImage) -> Option<Detection> {
        let (state, rms) = self.fit(face)?;
        let plausible = rms <= self.max_rms
            && state.pose.to_array().iter().all(|v| v.abs() < 1.2)
            && (-0.5..=1.5).contains(&state.mouth)
            && state.blink.to_array().iter().all(|b| (-0.25..=1.0).contains(b));
        plausible.then(|| Detection {
            landmarks: synth_landmarks(&self.style, &state),
            pose: state.pose,
            blink: state.blink,
        })
    }
}

/// Generates the synthetic dataset under `out_dir` and writes its manifest.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let extractor = MfccExtractor::new(&cfg.features)?;
    let mut identities = Vec::with_capacity(cfg.n_identities);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for id in 0..cfg.n_identities {
        let name = SynthConfig::identity_name(id);
        std::fs::create_dir_all(out_dir.join(&name))?;
        let style = FaceStyle::generate(cfg.seed, id);
        let n = cfg.samples_for(id);
        let splits = assign_splits(n, cfg.split, cfg.seed ^ ((id as u64 + 1) << 32));
        let records = exec::map_indexed(n, |k| -> Result<SampleRecord> {
            let draw = draw_sample(cfg, id, k);
            let window = cfg.audio.window(draw.state.mouth, draw.amplitude, draw.phase, &cfg.features);
            let mfcc = extractor.extract(&window)?;
            let landmarks = synth_landmarks(&style, &draw.state);
            let face = render_face(&style, &draw.state, cfg.resolution);
            let paths = sample_paths(&name, k);
            write_sample_files(out_dir, &paths, &mfcc, &landmarks, &face)?;
            Ok(SampleRecord {
                identity: name.clone(),
                frame_index: k,
                split: splits[k],
                mfcc: paths.0,
                landmarks: paths.1,
                face: paths.2,
                pose: draw.state.pose,
                blink: draw.state.blink,
                mouth: Some(draw.state.mouth),
            })
        });
        for r in records {
            samples.push(r?);
        }
        identities.push(IdentityEntry {
            name,
            style: Some(style),
        });
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        pipeline_version: PIPELINE_VERSION.to_string(),
        resolution: cfg.resolution,
        landmark_count: cfg.landmark_count,
        groups: IndexGroups::toy20(),
        features: cfg.features.clone(),
        identities,
        samples,
        synth: Some(cfg.clone()),
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_mouth_has_minimum_height() {
        let style = FaceStyle::generate(7, 0);
        let mut state = draw_sample(&SynthConfig::toy(7), 0, 3).state;
        state.mouth = 0.0;
        let l = synth_landmarks(&style, &state);
        let h = l.vertical_extent(&l.groups.mouth);
        assert!((h - style.mouth_height_min).abs() < 1e-12);
    }

    #[test]
    fn draws_are_deterministic_and_in_range() {
        let cfg = SynthConfig::toy(7);
        for i in 0..50 {
            let d = draw_sample(&cfg, 1, i);
            assert_eq!(d, draw_sample(&cfg, 1, i));
            assert!(d.state.pose.out_of_range().is_empty());
            assert!((0.0..=1.0).contains(&d.state.mouth));
        }
        assert_ne!(draw_sample(&cfg, 0, 0), draw_sample(&cfg, 1, 0));
    }

    #[test]
    fn oracle_recovers_state() {
        let cfg = SynthConfig::toy(7);
        let style = FaceStyle::generate(7, 0);
        let det = OracleDetector::new(style.clone());
        for i in 0..5 {
            let s = draw_sample(&cfg, 0, i).state;
            let img = render_face(&style, &s, 64);
            let (fit, rms) = det.fit(&img).unwrap();
            assert!(rms < 1e-9, "rms {rms}");
            let (a, b) = (fit.to_vec(), s.to_vec());
            assert!((a - b).amax() < 1e-6, "sample {i}: {a:?} vs {b:?}");
        }
    }
}
