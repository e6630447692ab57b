use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use super::LEAKY_SLOPE;
use crate::exec;

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Param { shape, value, grad }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param::new(shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    fn accumulate(&mut self, g: &[f64]) {
        for (a, b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Init {
    /// Weights ~ N(0, std), biases zero, norm scales ~ N(1, std).
    Normal { std: f64 },
    /// Weights ~ N(0, gain² / fan_in), biases zero, norm scales one.
    FanIn { gain: f64 },
    /// Everything zero (norm scales included).
    Zeros,
}

impl Init {
    pub const DEFAULT: Init = Init::Normal { std: 0.02 };

    /// Gain that preserves activation variance through a leaky rectifier.
    pub fn leaky_gain() -> f64 {
        (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt()
    }

    fn weights<R: Rng>(&self, n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
        let std = match *self {
            Init::Normal { std } => std,
            Init::FanIn { gain } => gain / (fan_in.max(1) as f64).sqrt(),
            Init::Zeros => return vec![0.0; n],
        };
        let d = Normal::new(0.0, std).expect("valid std");
        (0..n).map(|_| d.sample(rng)).collect()
    }

    fn scales<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            Init::Normal { std } => {
                let d = Normal::new(1.0, std).expect("valid std");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Init::FanIn { .. } => vec![1.0; n],
            Init::Zeros => vec![0.0; n],
        }
    }
}

/// Which gradients a backward pass should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Backprop {
    pub params: bool,
    pub input: bool,
}

impl Backprop {
    pub const FULL: Backprop = Backprop {
        params: true,
        input: true,
    };
    /// Gradient flows through the layer but parameters stay untouched.
    pub const INPUT_ONLY: Backprop = Backprop {
        params: false,
        input: true,
    };
    pub const PARAMS_ONLY: Backprop = Backprop {
        params: true,
        input: false,
    };
}

/// Fully connected layer: `y = x Wᵀ + b`, weight stored `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, init: Init, rng: &mut R) -> Self {
        Linear {
            in_features,
            out_features,
            weight: Param::new(
                vec![out_features, in_features],
                init.weights(in_features * out_features, in_features, rng),
            ),
            bias: Param::zeros(vec![out_features]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let n = x.n();
        assert_eq!(x.sample_len(), self.in_features, "linear input width");
        let mut y = vec![0.0; n * self.out_features];
        for row in y.chunks_mut(self.out_features) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(
            n,
            self.in_features,
            self.out_features,
            x.data(),
            false,
            &self.weight.value,
            true,
            &mut y,
            1.0,
        );
        Tensor::from_vec([n, self.out_features, 1, 1], y)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor, bp: Backprop) -> Option<Tensor> {
        let n = x.n();
        if bp.params {
            let mut dw = vec![0.0; self.out_features * self.in_features];
            gemm(
                self.out_features,
                n,
                self.in_features,
                dy.data(),
                true,
                x.data(),
                false,
                &mut dw,
                0.0,
            );
            self.weight.accumulate(&dw);
            let mut db = vec![0.0; self.out_features];
            for row in dy.data().chunks(self.out_features) {
                for (a, b) in db.iter_mut().zip(row) {
                    *a += b;
                }
            }
            self.bias.accumulate(&db);
        }
        if !bp.input {
            return None;
        }
        let mut dx = vec![0.0; n * self.in_features];
        gemm(
            n,
            self.out_features,
            self.in_features,
            dy.data(),
            false,
            &self.weight.value,
            false,
            &mut dx,
            0.0,
        );
        Some(Tensor::from_vec(x.shape(), dx))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

/// Kernel, stride and padding of a 2-D convolution (height first).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub const fn square(k: usize, s: usize, p: usize) -> Self {
        ConvGeom {
            kh: k,
            kw: k,
            sh: s,
            sw: s,
            ph: p,
            pw: p,
        }
    }

    /// Output size of a convolution over an `h × w` input, `None` when the kernel does not fit.
    pub fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ih = h + 2 * self.ph;
        let iw = w + 2 * self.pw;
        if ih < self.kh || iw < self.kw {
            return None;
        }
        Some(((ih - self.kh) / self.sh + 1, (iw - self.kw) / self.sw + 1))
    }

    /// Output size of the transposed convolution over an `h × w` input.
    pub fn transposed_out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.sh + self.kh - 2 * self.ph,
            (w - 1) * self.sw + self.kw - 2 * self.pw,
        )
    }

    fn taps(&self) -> usize {
        self.kh * self.kw
    }
}

/// Unfolds one `c × h × w` image into a `(c·kh·kw) × (oh·ow)` patch matrix.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, g: &ConvGeom, oh: usize, ow: usize) -> Vec<f64> {
    let p = oh * ow;
    let mut col = vec![0.0; c * g.taps() * p];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut col[((ci * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    let dst = &mut row[oy * ow..][..ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch columns back, summing overlaps.
#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    oh: usize,
    ow: usize,
    out: &mut [f64],
) {
    let p = oh * ow;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &col[((ci * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..][..w];
                    let src = &row[oy * ow..][..ow];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

fn sum_in_order(parts: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        for (a, b) in acc.iter_mut().zip(p) {
            *a += b;
        }
    }
    acc
}

/// 2-D convolution, weight stored `[out_c, in_c·kh·kw]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeom,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let k = in_channels * geom.taps();
        Conv2d {
            in_channels,
            out_channels,
            geom,
            weight: Param::new(vec![out_channels, k], init.weights(out_channels * k, k, rng)),
            bias: Param::zeros(vec![out_channels]),
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        self.geom.out_dims(h, w)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c(), self.in_channels, "conv input channels");
        let (h, w) = (x.h(), x.w());
        let (oh, ow) = self.out_dims(h, w).expect("conv kernel larger than input");
        let k = self.in_channels * self.geom.taps();
        let p = oh * ow;
        let outs = exec::map_indexed(x.n(), |i| {
            let col = im2col(x.sample(i), self.in_channels, h, w, &self.geom, oh, ow);
            let mut y = vec![0.0; self.out_channels * p];
            for (row, b) in y.chunks_mut(p).zip(&self.bias.value) {
                row.iter_mut().for_each(|v| *v = *b);
            }
            gemm(self.out_channels, k, p, &self.weight.value, false, &col, false, &mut y, 1.0);
            y
        });
        Tensor::stack(&outs, [self.out_channels, oh, ow])
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor, bp: Backprop) -> Option<Tensor> {
        let (h, w) = (x.h(), x.w());
        let (oh, ow) = (dy.h(), dy.w());
        let k = self.in_channels * self.geom.taps();
        let p = oh * ow;
        let weight = &self.weight.value;
        let (geom, in_c, out_c) = (self.geom, self.in_channels, self.out_channels);
        let parts = exec::map_indexed(x.n(), |i| {
            let col = im2col(x.sample(i), in_c, h, w, &geom, oh, ow);
            let g = dy.sample(i);
            let mut dw = Vec::new();
            let mut db = Vec::new();
            if bp.params {
                dw = vec![0.0; out_c * k];
                gemm(out_c, p, k, g, false, &col, true, &mut dw, 0.0);
                db = g.chunks(p).map(|r| r.iter().sum()).collect();
            }
            let mut dx = Vec::new();
            if bp.input {
                let mut dcol = vec![0.0; k * p];
                gemm(k, out_c, p, weight, true, g, false, &mut dcol, 0.0);
                dx = vec![0.0; in_c * h * w];
                col2im(&dcol, in_c, h, w, &geom, oh, ow, &mut dx);
            }
            (dw, db, dx)
        });
        if bp.params {
            let dws: Vec<Vec<f64>> = parts.iter().map(|p| p.0.clone()).collect();
            let dbs: Vec<Vec<f64>> = parts.iter().map(|p| p.1.clone()).collect();
            self.weight.accumulate(&sum_in_order(&dws, out_c * k));
            self.bias.accumulate(&sum_in_order(&dbs, out_c));
        }
        if !bp.input {
            return None;
        }
        let dx: Vec<Vec<f64>> = parts.into_iter().map(|p| p.2).collect();
        Some(Tensor::stack(&dx, [in_c, h, w]))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

/// Transposed 2-D convolution, weight stored `[in_c, out_c·kh·kw]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeom,
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let k = out_channels * geom.taps();
        ConvTranspose2d {
            in_channels,
            out_channels,
            geom,
            weight: Param::new(vec![in_channels, k], init.weights(in_channels * k, in_channels * geom.taps(), rng)),
            bias: Param::zeros(vec![out_channels]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c(), self.in_channels, "transposed conv input channels");
        let (h, w) = (x.h(), x.w());
        let (oh, ow) = self.geom.transposed_out_dims(h, w);
        let k = self.out_channels * self.geom.taps();
        let p = h * w;
        let outs = exec::map_indexed(x.n(), |i| {
            let mut col = vec![0.0; k * p];
            gemm(k, self.in_channels, p, &self.weight.value, true, x.sample(i), false, &mut col, 0.0);
            let mut y = vec![0.0; self.out_channels * oh * ow];
            col2im(&col, self.out_channels, oh, ow, &self.geom, h, w, &mut y);
            for (plane, b) in y.chunks_mut(oh * ow).zip(&self.bias.value) {
                plane.iter_mut().for_each(|v| *v += b);
            }
            y
        });
        Tensor::stack(&outs, [self.out_channels, oh, ow])
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor, bp: Backprop) -> Option<Tensor> {
        let (h, w) = (x.h(), x.w());
        let (oh, ow) = (dy.h(), dy.w());
        let k = self.out_channels * self.geom.taps();
        let p = h * w;
        let weight = &self.weight.value;
        let (geom, in_c, out_c) = (self.geom, self.in_channels, self.out_channels);
        let parts = exec::map_indexed(x.n(), |i| {
            let g = dy.sample(i);
            let dcol = im2col(g, out_c, oh, ow, &geom, h, w);
            let mut dw = Vec::new();
            let mut db = Vec::new();
            if bp.params {
                dw = vec![0.0; in_c * k];
                gemm(in_c, p, k, x.sample(i), false, &dcol, true, &mut dw, 0.0);
                db = g.chunks(oh * ow).map(|r| r.iter().sum()).collect();
            }
            let mut dx = Vec::new();
            if bp.input {
                dx = vec![0.0; in_c * p];
                gemm(in_c, k, p, weight, false, &dcol, false, &mut dx, 0.0);
            }
            (dw, db, dx)
        });
        if bp.params {
            let dws: Vec<Vec<f64>> = parts.iter().map(|p| p.0.clone()).collect();
            let dbs: Vec<Vec<f64>> = parts.iter().map(|p| p.1.clone()).collect();
            self.weight.accumulate(&sum_in_order(&dws, in_c * k));
            self.bias.accumulate(&sum_in_order(&dbs, out_c));
        }
        if !bp.input {
            return None;
        }
        let dx: Vec<Vec<f64>> = parts.into_iter().map(|p| p.2).collect();
        Some(Tensor::stack(&dx, [in_c, h, w]))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

/// Per-channel batch normalization over (N, H, W).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Saved state of a training-mode batch norm forward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new<R: Rng>(channels: usize, init: Init, rng: &mut R) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::new(vec![channels], init.scales(channels, rng)),
            beta: Param::zeros(vec![channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Normalizes with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, x: &Tensor) -> (Tensor, BnCache) {
        let (n, c, hw) = (x.n(), x.c(), x.h() * x.w());
        let m = (n * hw) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in 0..n {
            let s = x.sample(i);
            for ch in 0..c {
                mean[ch] += s[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for i in 0..n {
            let s = x.sample(i);
            for ch in 0..c {
                var[ch] += s[ch * hw..(ch + 1) * hw]
                    .iter()
                    .map(|v| (v - mean[ch]) * (v - mean[ch]))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = x.clone();
        let mut y = x.clone();
        for i in 0..n {
            let xs = x_hat.sample_mut(i);
            for ch in 0..c {
                for v in &mut xs[ch * hw..(ch + 1) * hw] {
                    *v = (*v - mean[ch]) * inv_std[ch];
                }
            }
            let ys = y.sample_mut(i);
            for ch in 0..c {
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                for (yv, xv) in ys[ch * hw..(ch + 1) * hw]
                    .iter_mut()
                    .zip(&xs[ch * hw..(ch + 1) * hw])
                {
                    *yv = g * xv + b;
                }
            }
        }
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for ch in 0..c {
            self.running_mean[ch] =
                (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean[ch];
            self.running_var[ch] =
                (1.0 - self.momentum) * self.running_var[ch] + self.momentum * var[ch] * unbias;
        }
        (y, BnCache { x_hat, inv_std })
    }

    /// Normalizes with the stored running statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let (c, hw) = (x.c(), x.h() * x.w());
        let mut y = x.clone();
        for i in 0..x.n() {
            let s = y.sample_mut(i);
            for ch in 0..c {
                let inv = 1.0 / (self.running_var[ch] + self.eps).sqrt();
                let (g, b, mu) = (self.gamma.value[ch], self.beta.value[ch], self.running_mean[ch]);
                for v in &mut s[ch * hw..(ch + 1) * hw] {
                    *v = g * (*v - mu) * inv + b;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Tensor, bp: Backprop) -> Option<Tensor> {
        let (n, c, hw) = (dy.n(), dy.c(), dy.h() * dy.w());
        let m = (n * hw) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for i in 0..n {
            let g = dy.sample(i);
            let xh = cache.x_hat.sample(i);
            for ch in 0..c {
                for (gv, xv) in g[ch * hw..(ch + 1) * hw].iter().zip(&xh[ch * hw..(ch + 1) * hw]) {
                    sum_dy[ch] += gv;
                    sum_dy_xhat[ch] += gv * xv;
                }
            }
        }
        if bp.params {
            self.gamma.accumulate(&sum_dy_xhat);
            self.beta.accumulate(&sum_dy);
        }
        if !bp.input {
            return None;
        }
        let mut dx = dy.clone();
        for i in 0..n {
            let xh = cache.x_hat.sample(i);
            let d = dx.sample_mut(i);
            for ch in 0..c {
                let k = self.gamma.value[ch] * cache.inv_std[ch] / m;
                for (dv, xv) in d[ch * hw..(ch + 1) * hw].iter_mut().zip(&xh[ch * hw..(ch + 1) * hw]) {
                    *dv = k * (m * *dv - sum_dy[ch] - xv * sum_dy_xhat[ch]);
                }
            }
        }
        Some(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward(x: &Tensor, dy: &Tensor, slope: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn relu(x: &Tensor) -> Tensor {
    leaky_relu(x, 0.0)
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    leaky_relu_backward(x, dy, 0.0)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Backward of tanh given its output `y`.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| g * (1.0 - v * v))
        .collect();
    Tensor::from_vec(y.shape(), data)
}
