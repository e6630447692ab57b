//! Evaluation: SSIM, the Gaussian Fréchet distance, and detector-based
//! landmark, pose and blink errors on generated faces.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{BlinkPair, LandmarkSet, PoseTriple};
use crate::reenact::FaceImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Dynamic range of `[−1, 1]` images.
pub const SSIM_RANGE: f64 = 2.0;

/// Normalized 11×11 Gaussian window, row-major.
pub fn ssim_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b / (s * s));
        }
    }
    w
}

/// Mean SSIM over all valid 11×11 windows and the three channels.
pub fn ssim(a: &FaceImage, b: &FaceImage) -> Result<f64> {
    if a.size() != b.size() {
        return Err(Error::Shape(format!(
            "ssim: resolutions {} and {} differ",
            a.size(),
            b.size()
        )));
    }
    let n = a.size();
    if n < SSIM_WINDOW {
        return Err(Error::Shape(format!("ssim needs images of at least {SSIM_WINDOW} px")));
    }
    let w = ssim_window();
    let c1 = (0.01 * SSIM_RANGE).powi(2);
    let c2 = (0.03 * SSIM_RANGE).powi(2);
    let side = n - SSIM_WINDOW + 1;
    let (pa, pb) = (a.pixels(), b.pixels());
    let per_row = exec::map_indexed(3 * side, |job| {
        let (ch, y0) = (job / side, job % side);
        let base = ch * n * n;
        let mut row = Vec::with_capacity(side);
        for x0 in 0..side {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let k = w[dy * SSIM_WINDOW + dx];
                    let idx = base + (y0 + dy) * n + x0 + dx;
                    let (u, v) = (pa[idx], pb[idx]);
                    ma += k * u;
                    mb += k * v;
                    saa += k * u * u;
                    sbb += k * v * v;
                    sab += k * u * v;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            row.push(
                ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2)),
            );
        }
        exec::pairwise_sum(&row)
    });
    Ok(exec::pairwise_sum(&per_row) / (3 * side * side) as f64)
}

fn check_symmetric(c: &DMatrix<f64>) -> Result<()> {
    let scale = c.amax().max(1.0);
    let asym = (c - c.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(Error::AsymmetricCovariance(asym));
    }
    Ok(())
}

/// Square root of a symmetric PSD matrix via eigendecomposition; eigenvalues
/// down to −1e-8 are clipped to zero.
pub fn sqrtm_psd(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = c.amax().max(1.0);
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        if *v < -1e-8 * scale {
            return Err(Error::InvalidArgument(format!(
                "covariance is not positive semidefinite (eigenvalue {v})"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&d) * q.transpose())
}

/// `‖μ1 − μ2‖² + tr(C1 + C2 − 2(C1·C2)^½)`.
pub fn frechet_distance(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.shape() != (d, d) || cov2.shape() != (d, d) {
        return Err(Error::Shape("frechet distance: dimension mismatch".into()));
    }
    check_symmetric(cov1)?;
    check_symmetric(cov2)?;
    // tr((C1 C2)^½) = tr((√C1 C2 √C1)^½), whose argument is symmetric PSD.
    let s1 = sqrtm_psd(cov1)?;
    let inner = &s1 * cov2 * &s1;
    let cross = sqrtm_psd(&((&inner + inner.transpose()) * 0.5))?.trace();
    let diff = (mu1 - mu2).norm_squared();
    Ok((diff + cov1.trace() + cov2.trace() - 2.0 * cross).max(0.0))
}

/// Mean and unbiased covariance of feature rows.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = features.len();
    if n < 2 {
        return Err(Error::InvalidArgument("gaussian statistics need at least two samples".into()));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mu = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x.clone();
    for j in 0..d {
        for i in 0..n {
            centered[(i, j)] -= mu[j];
        }
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mu, cov))
}

/// Stand-in image embedder: per-channel box-average down to `grid × grid`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelStatsEmbedder {
    pub grid: usize,
}

impl Default for PixelStatsEmbedder {
    fn default() -> Self {
        PixelStatsEmbedder { grid: 4 }
    }
}

impl PixelStatsEmbedder {
    pub fn embed(&self, img: &FaceImage) -> Vec<f64> {
        let n = img.size();
        let g = self.grid.clamp(1, n);
        let mut out = vec![0.0; 3 * g * g];
        let mut counts = vec![0usize; g * g];
        for y in 0..n {
            for x in 0..n {
                counts[(y * g / n) * g + x * g / n] += 1;
            }
        }
        for c in 0..3 {
            for y in 0..n {
                for x in 0..n {
                    out[c * g * g + (y * g / n) * g + x * g / n] += img.get(c, x, y);
                }
            }
        }
        for c in 0..3 {
            for (k, cnt) in counts.iter().enumerate() {
                out[c * g * g + k] /= *cnt as f64;
            }
        }
        out
    }
}

/// What a face detector reports for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub landmarks: LandmarkSet,
    pub pose: PoseTriple,
    pub blink: BlinkPair,
}

/// Pluggable face analysis: `None` when no face is found.
pub trait DetectorInterface: Send + Sync {
    fn detect(&self, face: &FaceImage) -> Option<Detection>;
}

/// One generated face with the signals that drove it.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub generated: FaceImage,
    pub landmarks: LandmarkSet,
    pub pose: PoseTriple,
    pub blink: BlinkPair,
    /// Ground-truth face for SSIM and the Fréchet term.
    pub reference: Option<FaceImage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub n_detected: usize,
    pub dr: f64,
    /// Pixels at the face resolution; `None` without detections.
    pub ale: Option<f64>,
    /// Radians, mean of the three absolute component errors.
    pub ape: Option<f64>,
    pub abe: Option<f64>,
    pub ssim: Option<f64>,
    pub frechet: Option<f64>,
}

/// Per-sample detector outputs, for callers that need more than the means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDetections {
    pub detections: Vec<Option<Detection>>,
}

/// Mean absolute coordinate difference in pixels.
pub fn landmark_error_px(a: &LandmarkSet, b: &LandmarkSet, resolution: usize) -> f64 {
    let fa = a.flat();
    let fb = b.flat();
    let d: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).collect();
    exec::pairwise_sum(&d) / d.len() as f64 * resolution as f64
}

pub fn pose_error(a: &PoseTriple, b: &PoseTriple) -> f64 {
    let (x, y) = (a.to_array(), b.to_array());
    ((x[0] - y[0]).abs() + (x[1] - y[1]).abs() + (x[2] - y[2]).abs()) / 3.0
}

pub fn blink_error(a: &BlinkPair, b: &BlinkPair) -> f64 {
    ((a.left - b.left).abs() + (a.right - b.right).abs()) / 2.0
}

/// Runs the detector over every sample, returning the report and raw detections.
pub fn evaluate_detailed(
    samples: &[EvalSample],
    detector: &dyn DetectorInterface,
) -> Result<(MetricsReport, SampleDetections)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let detections = exec::map_slice(samples, |s| detector.detect(&s.generated));
    let (mut ale, mut ape, mut abe) = (Vec::new(), Vec::new(), Vec::new());
    for (s, d) in samples.iter().zip(&detections) {
        if let Some(d) = d {
            if d.landmarks.len() != s.landmarks.len() {
                return Err(Error::Shape("detector landmark count differs from ground truth".into()));
            }
            ale.push(landmark_error_px(&d.landmarks, &s.landmarks, s.generated.size()));
            ape.push(pose_error(&d.pose, &s.pose));
            abe.push(blink_error(&d.blink, &s.blink));
        }
    }
    let k = ale.len();
    let mean = |v: &[f64]| (k > 0).then(|| exec::pairwise_sum(v) / k as f64);
    let refs: Option<Vec<&FaceImage>> = samples.iter().map(|s| s.reference.as_ref()).collect();
    let (ssim_mean, frechet) = match refs {
        Some(refs) => {
            let vals = exec::map_indexed(samples.len(), |i| ssim(&samples[i].generated, refs[i]));
            let vals = vals.into_iter().collect::<Result<Vec<_>>>()?;
            let emb = PixelStatsEmbedder::default();
            let fd = if samples.len() >= 2 {
                let g: Vec<Vec<f64>> = samples.iter().map(|s| emb.embed(&s.generated)).collect();
                let r: Vec<Vec<f64>> = refs.iter().map(|f| emb.embed(f)).collect();
                let (m1, c1) = gaussian_stats(&g)?;
                let (m2, c2) = gaussian_stats(&r)?;
                Some(frechet_distance(&m1, &c1, &m2, &c2)?)
            } else {
                None
            };
            (Some(exec::pairwise_sum(&vals) / vals.len() as f64), fd)
        }
        None => (None, None),
    };
    let report = MetricsReport {
        n_samples: samples.len(),
        n_detected: k,
        dr: k as f64 / samples.len() as f64,
        ale: mean(&ale),
        ape: mean(&ape),
        abe: mean(&abe),
        ssim: ssim_mean,
        frechet,
    };
    Ok((report, SampleDetections { detections }))
}

pub fn evaluate_generated(samples: &[EvalSample], detector: &dyn DetectorInterface) -> Result<MetricsReport> {
    evaluate_detailed(samples, detector).map(|(r, _)| r)
}

/// Pearson correlation; `None` when either series is constant or lengths differ.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ssim_identity_and_mismatch() {
        let a = FaceImage::new(16, (0..768).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect()).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&a, &FaceImage::constant(32, 0.0)).is_err());
    }

    #[test]
    fn frechet_trivial_cases() {
        let i = DMatrix::<f64>::identity(3, 3);
        let m = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(frechet_distance(&m, &i, &m, &i).unwrap().abs() < 1e-12);
        let m2 = DVector::from_vec(vec![1.0, 0.0, 5.0]);
        assert!((frechet_distance(&m, &i, &m2, &i).unwrap() - 8.0).abs() < 1e-12);
        let mut a = i.clone();
        a[(0, 1)] = 0.5;
        assert!(matches!(frechet_distance(&m, &a, &m, &i), Err(Error::AsymmetricCovariance(_))));
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&x, &[1.0; 4]).is_none());
    }

    #[test]
    fn embedder_averages_cells() {
        let img = FaceImage::constant(8, 0.25);
        let e = PixelStatsEmbedder { grid: 2 }.embed(&img);
        assert_eq!(e.len(), 12);
        assert!(e.iter().all(|v| (*v - 0.25).abs() < 1e-15));
    }
}
