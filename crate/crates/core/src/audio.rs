//! Audio featurization: resampling, per-frame windowing and MFCC extraction.
//!
//! The MFCC pipeline is: pre-emphasis, `T` Hann-windowed frames of length
//! `2·hop` starting every `hop = window_len / T` samples (zero padded past the
//! window end), power spectrum, triangular mel filterbank over `0..sr/2`,
//! `ln(energy + log_floor)`, orthonormal DCT-II truncated to `C` coefficients.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AudioTrack {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioTrack {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteAudio);
        }
        Ok(AudioTrack {
            samples,
            sample_rate,
        })
    }

    pub fn silence(seconds: f64, sample_rate: u32) -> Self {
        AudioTrack {
            samples: vec![0.0; (seconds * sample_rate as f64).round() as usize],
            sample_rate,
        }
    }

    pub fn sine(freq: f64, amplitude: f64, phase: f64, len: usize, sample_rate: u32) -> Self {
        let sr = sample_rate as f64;
        AudioTrack {
            samples: (0..len)
                .map(|i| amplitude * (2.0 * PI * freq * i as f64 / sr + phase).sin())
                .collect(),
            sample_rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_seconds: f64,
    pub fps: f64,
    pub n_mfcc: usize,
    pub n_fft_frames: usize,
    pub mel_bands: usize,
    pub log_floor: f64,
    #[serde(default = "default_pre_emphasis")]
    pub pre_emphasis: f64,
    /// Window ends at the frame timestamp instead of being centered on it.
    #[serde(default)]
    pub causal: bool,
}

fn default_pre_emphasis() -> f64 {
    0.97
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 44_100,
            window_seconds: 0.2,
            fps: 25.0,
            n_mfcc: 20,
            n_fft_frames: 16,
            mel_bands: 40,
            log_floor: 1e-10,
            pre_emphasis: default_pre_emphasis(),
            causal: false,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config("feature config", m));
        if self.sample_rate == 0 || self.fps <= 0.0 || self.window_seconds <= 0.0 {
            return bad("sample_rate, fps and window_seconds must be positive");
        }
        if self.n_fft_frames == 0 || self.n_mfcc == 0 {
            return bad("n_fft_frames and n_mfcc must be positive");
        }
        if (self.window_len() as f64) < self.n_fft_frames as f64 {
            return bad("window_seconds × sample_rate must be at least n_fft_frames");
        }
        if self.n_mfcc > self.mel_bands {
            return bad("n_mfcc must not exceed mel_bands");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    /// Samples per frame window.
    pub fn window_len(&self) -> usize {
        (self.window_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn hop(&self) -> usize {
        (self.window_len() / self.n_fft_frames).max(1)
    }

    /// STFT frame length (and FFT size).
    pub fn frame_len(&self) -> usize {
        2 * self.hop()
    }

    pub fn id(&self) -> String {
        format!(
            "mfcc-sr{}-w{}-fps{}-t{}-c{}-mel{}-floor{:e}-pre{}-{}",
            self.sample_rate,
            self.window_seconds,
            self.fps,
            self.n_fft_frames,
            self.n_mfcc,
            self.mel_bands,
            self.log_floor,
            self.pre_emphasis,
            if self.causal { "causal" } else { "centered" }
        )
    }
}

/// `T × C` cepstral feature grid, row-major by time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfccFeature {
    pub frames: usize,
    pub coeffs: usize,
    pub values: Vec<f64>,
    pub config_id: String,
}

impl MfccFeature {
    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.coeffs + c]
    }

    pub fn check(&self, cfg: &FeatureConfig) -> Result<()> {
        if self.frames != cfg.n_fft_frames || self.coeffs != cfg.n_mfcc {
            return Err(Error::Shape(format!(
                "mfcc is {}×{}, config expects {}×{}",
                self.frames, self.coeffs, cfg.n_fft_frames, cfg.n_mfcc
            )));
        }
        if self.values.len() != self.frames * self.coeffs {
            return Err(Error::Shape("mfcc value count".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mfcc".into()));
        }
        Ok(())
    }
}

/// Linear-interpolation resampler.
pub fn resample(track: &AudioTrack, target_rate: u32) -> Result<AudioTrack> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if track.samples.is_empty() {
        return Err(Error::EmptyAudio);
    }
    if track.sample_rate == target_rate {
        return Ok(track.clone());
    }
    let ratio = track.sample_rate as f64 / target_rate as f64;
    let n = track.samples.len();
    let out_len = ((n as f64) * target_rate as f64 / track.sample_rate as f64).round() as usize;
    let s = &track.samples;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            if j + 1 >= n {
                s[n - 1]
            } else {
                let f = pos - j as f64;
                s[j] + (s[j + 1] - s[j]) * f
            }
        })
        .collect();
    Ok(AudioTrack {
        samples,
        sample_rate: target_rate,
    })
}

/// Audio window for video frame `frame_index`, zero padded outside the track.
///
/// The track is resampled to the configured rate first when needed.
pub fn window_for_frame(track: &AudioTrack, frame_index: usize, cfg: &FeatureConfig) -> Result<AudioTrack> {
    let track = if track.sample_rate != cfg.sample_rate && !track.samples.is_empty() {
        resample(track, cfg.sample_rate)?
    } else {
        track.clone()
    };
    let len = cfg.window_len();
    let center = (frame_index as f64 / cfg.fps * cfg.sample_rate as f64).round() as i64;
    let start = if cfg.causal {
        center - len as i64
    } else {
        center - (len / 2) as i64
    };
    let samples = (0..len as i64)
        .map(|k| {
            let idx = start + k;
            if idx >= 0 && (idx as usize) < track.samples.len() {
                track.samples[idx as usize]
            } else {
                0.0
            }
        })
        .collect();
    Ok(AudioTrack {
        samples,
        sample_rate: cfg.sample_rate,
    })
}

/// Window centered on the midpoint of a clip, used for free-standing request clips.
pub fn centered_window(track: &AudioTrack, cfg: &FeatureConfig) -> Result<AudioTrack> {
    let track = if track.sample_rate != cfg.sample_rate {
        resample(track, cfg.sample_rate)?
    } else {
        track.clone()
    };
    let len = cfg.window_len();
    let start = track.samples.len() as i64 / 2 - (len / 2) as i64;
    let samples = (0..len as i64)
        .map(|k| {
            let idx = start + k;
            if idx >= 0 && (idx as usize) < track.samples.len() {
                track.samples[idx as usize]
            } else {
                0.0
            }
        })
        .collect();
    Ok(AudioTrack {
        samples,
        sample_rate: cfg.sample_rate,
    })
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters, `bands × (n_fft/2 + 1)`, row-major.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, bands: usize) -> Vec<f64> {
    let bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    let mut fb = vec![0.0; bands * bins];
    for m in 0..bands {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f >= lo && f <= mid && mid > lo {
                (f - lo) / (mid - lo)
            } else if f > mid && f <= hi && hi > mid {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[m * bins + k] = w;
        }
    }
    fb
}

/// Precomputed FFT plan, window and filterbank for one [`FeatureConfig`].
pub struct MfccExtractor {
    cfg: FeatureConfig,
    fft: Arc<dyn Fft<f64>>,
    hann: Vec<f64>,
    filterbank: Vec<f64>,
    dct: Vec<f64>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor").field("cfg", &self.cfg).finish()
    }
}

impl MfccExtractor {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.frame_len();
        let fft = FftPlanner::new().plan_fft_forward(n);
        let hann = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        let m = cfg.mel_bands;
        let mut dct = vec![0.0; cfg.n_mfcc * m];
        for k in 0..cfg.n_mfcc {
            let s = if k == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
            for j in 0..m {
                dct[k * m + j] = s * (PI * k as f64 * (j as f64 + 0.5) / m as f64).cos();
            }
        }
        Ok(MfccExtractor {
            cfg: cfg.clone(),
            fft,
            hann,
            filterbank: mel_filterbank(cfg.sample_rate, n, cfg.mel_bands),
            dct,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn extract(&self, window: &AudioTrack) -> Result<MfccFeature> {
        let cfg = &self.cfg;
        if window.samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteAudio);
        }
        if window.samples.len() != cfg.window_len() {
            return Err(Error::Shape(format!(
                "window has {} samples, config expects {}",
                window.samples.len(),
                cfg.window_len()
            )));
        }
        let x = &window.samples;
        let emphasized: Vec<f64> = (0..x.len())
            .map(|i| if i == 0 { x[0] } else { x[i] - cfg.pre_emphasis * x[i - 1] })
            .collect();
        let n = cfg.frame_len();
        let hop = cfg.hop();
        let bins = n / 2 + 1;
        let m = cfg.mel_bands;
        let mut values = Vec::with_capacity(cfg.n_fft_frames * cfg.n_mfcc);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut power = vec![0.0; bins];
        let mut logmel = vec![0.0; m];
        for t in 0..cfg.n_fft_frames {
            let start = t * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                let v = emphasized.get(start + i).copied().unwrap_or(0.0);
                *b = Complex::new(v * self.hann[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for (j, lm) in logmel.iter_mut().enumerate() {
                let e: f64 = self.filterbank[j * bins..(j + 1) * bins]
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                *lm = (e + cfg.log_floor).ln();
            }
            for k in 0..cfg.n_mfcc {
                values.push(
                    self.dct[k * m..(k + 1) * m]
                        .iter()
                        .zip(&logmel)
                        .map(|(d, l)| d * l)
                        .sum(),
                );
            }
        }
        Ok(MfccFeature {
            frames: cfg.n_fft_frames,
            coeffs: cfg.n_mfcc,
            values,
            config_id: cfg.id(),
        })
    }
}

pub fn extract_mfcc(window: &AudioTrack, cfg: &FeatureConfig) -> Result<MfccFeature> {
    MfccExtractor::new(cfg)?.extract(window)
}

/// Reads a mono PCM WAV (16-bit integer or 32-bit float). Multi-channel files are averaged.
pub fn read_wav(path: &Path) -> Result<AudioTrack> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let raw: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "unsupported wav encoding {fmt:?} {bits}-bit (want 16-bit int or 32-bit float)"
            )))
        }
    };
    let ch = spec.channels.max(1) as usize;
    let samples = raw
        .chunks(ch)
        .map(|c| c.iter().sum::<f64>() / ch as f64)
        .collect();
    AudioTrack::new(samples, spec.sample_rate)
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: &Path, track: &AudioTrack) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: track.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for s in &track.samples {
        w.write_sample(*s as f32)?;
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_silence_doubles_length() {
        let t = AudioTrack::silence(1.0, 22_050);
        let r = resample(&t, 44_100).unwrap();
        assert_eq!(r.sample_rate, 44_100);
        assert_eq!(r.samples.len(), 44_100);
        assert!(r.samples.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn resample_identity_and_errors() {
        let t = AudioTrack::sine(100.0, 0.5, 0.0, 400, 8000);
        assert_eq!(resample(&t, 8000).unwrap(), t);
        assert!(matches!(resample(&t, 0), Err(Error::InvalidArgument(_))));
        let empty = AudioTrack { samples: vec![], sample_rate: 8000 };
        assert!(matches!(resample(&empty, 44_100), Err(Error::EmptyAudio)));
    }

    #[test]
    fn resample_preserves_duration() {
        for (src, dst, n) in [(8000u32, 44_100u32, 8000usize), (44_100, 16_000, 12_345), (48_000, 44_100, 999)] {
            let t = AudioTrack::silence(n as f64 / src as f64, src);
            let r = resample(&t, dst).unwrap();
            assert!((r.duration() - t.duration()).abs() <= 1.0 / dst as f64);
        }
    }

    #[test]
    fn frame_windows_pad_at_edges() {
        let cfg = FeatureConfig::default();
        let track = AudioTrack {
            samples: vec![1.0; 44_100],
            sample_rate: 44_100,
        };
        let w0 = window_for_frame(&track, 0, &cfg).unwrap();
        let len = cfg.window_len();
        assert_eq!(w0.samples.len(), len);
        assert!(w0.samples[..len / 2].iter().all(|v| *v == 0.0));
        assert!(w0.samples[len / 2..].iter().all(|v| *v == 1.0));

        let past = window_for_frame(&track, 1000, &cfg).unwrap();
        assert!(past.samples.iter().all(|v| *v == 0.0));

        let ramp = AudioTrack {
            samples: (0..44_100).map(|i| i as f64 / 44_100.0).collect(),
            sample_rate: 44_100,
        };
        // 1 s track at 25 fps: frame 12.5 is the midpoint, use 12 (t = 0.48 s).
        let mid = window_for_frame(&ramp, 12, &cfg).unwrap();
        let center = (12.0 / 25.0 * 44_100.0f64).round() as usize;
        assert_eq!(mid.samples, ramp.samples[center - len / 2..center - len / 2 + len].to_vec());
    }

    #[test]
    fn causal_window_ends_at_frame_time() {
        let cfg = FeatureConfig {
            causal: true,
            ..FeatureConfig::default()
        };
        let ramp = AudioTrack {
            samples: (0..44_100).map(|i| i as f64).collect(),
            sample_rate: 44_100,
        };
        let w = window_for_frame(&ramp, 20, &cfg).unwrap();
        let center = (20.0 / 25.0 * 44_100.0f64).round() as usize;
        assert_eq!(*w.samples.last().unwrap(), (center - 1) as f64);
    }

    #[test]
    fn silence_gives_log_floor_cepstrum() {
        let cfg = FeatureConfig::default();
        let w = AudioTrack::silence(cfg.window_seconds, cfg.sample_rate);
        let f = extract_mfcc(&w, &cfg).unwrap();
        assert_eq!((f.frames, f.coeffs), (16, 20));
        let c0 = (cfg.mel_bands as f64).sqrt() * cfg.log_floor.ln();
        for t in 0..f.frames {
            assert!((f.get(t, 0) - c0).abs() < 1e-9);
            for c in 1..f.coeffs {
                assert!(f.get(t, c).abs() < 1e-9, "c{c} = {}", f.get(t, c));
            }
        }
    }

    #[test]
    fn rejects_nan_and_wrong_length() {
        let cfg = FeatureConfig::default();
        let mut w = AudioTrack::silence(cfg.window_seconds, cfg.sample_rate);
        w.samples[10] = f64::NAN;
        assert!(matches!(extract_mfcc(&w, &cfg), Err(Error::NonFiniteAudio)));
        let short = AudioTrack::silence(0.1, cfg.sample_rate);
        assert!(matches!(extract_mfcc(&short, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = FeatureConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.n_mfcc = 41;
        assert!(cfg.validate().is_err());
        cfg.n_mfcc = 20;
        cfg.log_floor = 0.0;
        assert!(cfg.validate().is_err());
        cfg.log_floor = 1e-10;
        cfg.window_seconds = 1e-5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn wav_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let t = AudioTrack::sine(440.0, 0.5, 0.0, 1000, 16_000);
        write_wav(&p, &t).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        for (a, b) in back.samples.iter().zip(&t.samples) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
