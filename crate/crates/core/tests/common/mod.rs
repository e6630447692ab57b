//! Independent reference implementations used as test oracles. Written for
//! clarity over speed, sharing no code with the crate under test.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Naive MFCC: direct O(n²) DFT, textbook Hann window, HTK mel triangles,
/// natural log with floor, orthonormal DCT-II.
pub fn mfcc_reference(
    x: &[f64],
    sample_rate: f64,
    frames: usize,
    hop: usize,
    n_mfcc: usize,
    bands: usize,
    log_floor: f64,
    pre_emphasis: f64,
) -> Vec<Vec<f64>> {
    let n = 2 * hop;
    let mut y = vec![0.0; x.len()];
    for i in 0..x.len() {
        y[i] = if i == 0 { x[0] } else { x[i] - pre_emphasis * x[i - 1] };
    }
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(sample_rate / 2.0);
    let centers: Vec<f64> = (0..bands + 2).map(|i| inv(top * i as f64 / (bands as f64 + 1.0))).collect();
    let mut out = Vec::new();
    for t in 0..frames {
        let frame: Vec<f64> = (0..n)
            .map(|i| {
                let v = if t * hop + i < y.len() { y[t * hop + i] } else { 0.0 };
                v * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            })
            .collect();
        let power: Vec<f64> = (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * i % n) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect();
        let logmel: Vec<f64> = (0..bands)
            .map(|b| {
                let (l, c, h) = (centers[b], centers[b + 1], centers[b + 2]);
                let mut e = 0.0;
                for (k, p) in power.iter().enumerate() {
                    let f = k as f64 * sample_rate / n as f64;
                    let w = if f >= l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f <= h {
                        (h - f) / (h - c)
                    } else {
                        0.0
                    };
                    e += w * p;
                }
                (e + log_floor).ln()
            })
            .collect();
        out.push(
            (0..n_mfcc)
                .map(|k| {
                    let norm = if k == 0 { (1.0 / bands as f64).sqrt() } else { (2.0 / bands as f64).sqrt() };
                    norm * (0..bands)
                        .map(|j| logmel[j] * (PI * k as f64 * (j as f64 + 0.5) / bands as f64).cos())
                        .sum::<f64>()
                })
                .collect(),
        );
    }
    out
}

/// Mean SSIM over all valid 11×11 windows with Gaussian weights (σ 1.5),
/// averaged over channels. Images are `[c][y][x]` in `[−1, 1]`.
pub fn ssim_reference(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    let k = 11;
    let mut w = vec![vec![0.0; k]; k];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let c1 = (0.01f64 * 2.0).powi(2);
    let c2 = (0.03f64 * 2.0).powi(2);
    let size = a[0].len();
    let mut sum = 0.0;
    let mut count = 0.0;
    for c in 0..a.len() {
        for y0 in 0..=size - k {
            for x0 in 0..=size - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let g = w[i][j] / total;
                        ma += g * a[c][y0 + i][x0 + j];
                        mb += g * b[c][y0 + i][x0 + j];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let g = w[i][j] / total;
                        let (da, db) = (a[c][y0 + i][x0 + j] - ma, b[c][y0 + i][x0 + j] - mb);
                        va += g * da * da;
                        vb += g * db * db;
                        cov += g * da * db;
                    }
                }
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
    }
    sum / count
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: (eigenvalues, eigenvectors as columns).
pub fn jacobi_eigen(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let mut a = m.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

fn sqrt_psd(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (vals, vecs) = jacobi_eigen(m);
    let n = m.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| vecs[i][k] * vals[k].max(0.0).sqrt() * vecs[j][k]).sum())
                .collect()
        })
        .collect()
}

/// ‖μ1−μ2‖² + tr(C1) + tr(C2) − 2 tr((√C1 C2 √C1)^{1/2}).
pub fn frechet_reference(mu1: &[f64], c1: &[Vec<f64>], mu2: &[f64], c2: &[Vec<f64>]) -> f64 {
    let s1 = sqrt_psd(c1);
    let inner = matmul(&matmul(&s1, c2), &s1);
    let (vals, _) = jacobi_eigen(&inner);
    let tr_sqrt: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d2: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let n = c1.len();
    d2 + (0..n).map(|i| c1[i][i] + c2[i][i]).sum::<f64>() - 2.0 * tr_sqrt
}

fn seg_dist2(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let aq = [q[0] - a[0], q[1] - a[1]];
    let l2 = ab[0] * ab[0] + ab[1] * ab[1];
    let mut t = if l2 == 0.0 { 0.0 } else { (aq[0] * ab[0] + aq[1] * ab[1]) / l2 };
    t = t.clamp(0.0, 1.0);
    let d = [a[0] + t * ab[0] - q[0], a[1] + t * ab[1] - q[1]];
    d[0] * d[0] + d[1] * d[1]
}

fn to_pixels(points: &[[f64; 2]], size: usize) -> Vec<[f64; 2]> {
    points
        .iter()
        .map(|p| {
            let f = |v: f64| (v.clamp(0.0, 1.0) * size as f64).min(size as f64 - 1.0);
            [f(p[0]), f(p[1])]
        })
        .collect()
}

/// Pixel is white iff within `radius` of a landmark or within half a pixel of a group segment.
pub fn raster_reference(points: &[[f64; 2]], segments: &[(usize, usize)], size: usize, radius: f64) -> Vec<bool> {
    let px = to_pixels(points, size);
    let mut out = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let q = [x as f64, y as f64];
            let near_point = px.iter().any(|p| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) <= radius * radius);
            let near_seg = segments.iter().any(|&(a, b)| seg_dist2(q, px[a], px[b]) <= 0.25);
            out[y * size + x] = near_point || near_seg;
        }
    }
    out
}

/// Pixel is in the hull iff it lies on the inner side of every supporting line
/// through two landmarks; then disk dilation by brute-force neighborhood search.
pub fn mask_reference(points: &[[f64; 2]], size: usize, radius: usize) -> Vec<bool> {
    let px = to_pixels(points, size);
    let mut lines = Vec::new();
    for i in 0..px.len() {
        for j in 0..px.len() {
            if i == j || px[i] == px[j] {
                continue;
            }
            let side = |q: [f64; 2]| (px[j][0] - px[i][0]) * (q[1] - px[i][1]) - (px[j][1] - px[i][1]) * (q[0] - px[i][0]);
            if px.iter().all(|&p| side(p) >= 0.0) {
                lines.push((i, j));
            }
        }
    }
    let mut hull = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let q = [x as f64, y as f64];
            hull[y * size + x] = lines.iter().all(|&(i, j)| {
                (px[j][0] - px[i][0]) * (q[1] - px[i][1]) - (px[j][1] - px[i][1]) * (q[0] - px[i][0]) >= 0.0
            });
        }
    }
    let r = radius as i64;
    let mut out = vec![false; size * size];
    for y in 0..size as i64 {
        for x in 0..size as i64 {
            'search: for dy in -r..=r {
                for dx in -r..=r {
                    let (sx, sy) = (x + dx, y + dy);
                    if dx * dx + dy * dy <= r * r
                        && (0..size as i64).contains(&sx)
                        && (0..size as i64).contains(&sy)
                        && hull[(sy * size as i64 + sx) as usize]
                    {
                        out[(y * size as i64 + x) as usize] = true;
                        break 'search;
                    }
                }
            }
        }
    }
    out
}

/// Bilinear crop sampler: output pixel centers mapped into the source square,
/// four-neighbor interpolation, zeros outside the frame. Returns `[c][y][x]` in 0..=255.
pub fn crop_reference(frame: &image::RgbImage, x0: f64, y0: f64, side: f64, out: usize) -> Vec<Vec<Vec<f64>>> {
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let px = |x: i64, y: i64, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            frame.get_pixel(x as u32, y as u32)[c] as f64
        }
    };
    (0..3)
        .map(|c| {
            (0..out)
                .map(|i| {
                    (0..out)
                        .map(|j| {
                            let sx = x0 + (j as f64 + 0.5) * side / out as f64 - 0.5;
                            let sy = y0 + (i as f64 + 0.5) * side / out as f64 - 0.5;
                            let (fx, fy) = (sx.floor(), sy.floor());
                            let (ax, ay) = (sx - fx, sy - fy);
                            let (xi, yi) = (fx as i64, fy as i64);
                            (1.0 - ay) * ((1.0 - ax) * px(xi, yi, c) + ax * px(xi + 1, yi, c))
                                + ay * ((1.0 - ax) * px(xi, yi + 1, c) + ax * px(xi + 1, yi + 1, c))
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}
