//! Landmark-image-to-face generator (encoder-decoder with skips) and the
//! landmark-conditioned patch discriminator.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu, leaky_relu_backward, relu, relu_backward, tanh, tanh_backward, Backprop,
    BatchNorm2d, BnCache, Conv2d, ConvGeom, ConvTranspose2d, Init, Param, Tensor, LEAKY_SLOPE,
};
use crate::render::BinaryImage;

/// RGB face, channel-major `3 × size × size`, values in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceImage {
    size: usize,
    pixels: Vec<f64>,
}

impl FaceImage {
    pub fn new(size: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != 3 * size * size {
            return Err(Error::Shape(format!(
                "face image of size {size} needs {} values, got {}",
                3 * size * size,
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("face image".into()));
        }
        Ok(FaceImage { size, pixels })
    }

    pub fn constant(size: usize, value: f64) -> Self {
        FaceImage {
            size,
            pixels: vec![value; 3 * size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.pixels[(c * self.size + y) * self.size + x]
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        if img.width() != img.height() {
            return Err(Error::Shape("face images must be square".into()));
        }
        let size = img.width() as usize;
        let mut pixels = vec![0.0; 3 * size * size];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                pixels[(c * size + y as usize) * size + x as usize] = p.0[c] as f64 / 127.5 - 1.0;
            }
        }
        Ok(FaceImage { size, pixels })
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.size as u32, self.size as u32, |x, y| {
            let mut px = [0u8; 3];
            for (c, v) in px.iter_mut().enumerate() {
                let f = self.get(c, x as usize, y as usize);
                *v = ((f.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
            }
            image::Rgb(px)
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 3, self.size, self.size], self.pixels.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReenactorArch {
    pub resolution: usize,
    /// Encoder levels; `log2(resolution) − 2` by default.
    pub depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub disc_base_channels: usize,
    /// Stride-2 blocks in the patch discriminator.
    pub disc_strided_layers: usize,
}

impl ReenactorArch {
    /// 64 base channels at 256 px, scaled linearly with resolution.
    pub fn for_resolution(resolution: usize) -> Self {
        let depth = (resolution as f64).log2().round() as usize - 2;
        let base = (64 * resolution / 256).max(4);
        ReenactorArch {
            resolution,
            depth,
            base_channels: base,
            max_channels: 8 * base,
            disc_base_channels: base,
            disc_strided_layers: 3,
        }
    }

    /// Desk-scale 64 px preset.
    pub fn toy() -> Self {
        ReenactorArch {
            base_channels: 8,
            max_channels: 64,
            disc_base_channels: 8,
            ..Self::for_resolution(64)
        }
    }

    pub fn channels(&self) -> Vec<usize> {
        (0..self.depth)
            .map(|i| (self.base_channels << i).min(self.max_channels))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if ![8, 16, 32, 64, 128, 256].contains(&self.resolution) {
            return Err(Error::config("reenactor", "resolution must be a power of two in 8..=256"));
        }
        if self.depth < 2 || (self.resolution >> self.depth) < 1 {
            return Err(Error::config("reenactor", "depth must be ≥ 2 and leave ≥ 1 pixel"));
        }
        if self.base_channels == 0 || self.disc_base_channels == 0 {
            return Err(Error::config("reenactor", "channel counts must be positive"));
        }
        let mut s = self.resolution;
        for _ in 0..self.disc_strided_layers {
            s /= 2;
        }
        if s < 3 {
            return Err(Error::config("patch discriminator", "too many stride-2 blocks for the resolution"));
        }
        Ok(())
    }

    /// Side of the discriminator's logit grid.
    pub fn patch_grid(&self) -> usize {
        let mut s = self.resolution;
        for _ in 0..self.disc_strided_layers {
            s /= 2;
        }
        s - 2
    }
}

const DOWN: ConvGeom = ConvGeom::square(4, 2, 1);
const FLAT: ConvGeom = ConvGeom::square(4, 1, 1);

/// Encoder-decoder generator with skip connections at every level.
#[derive(Clone, Debug, PartialEq)]
pub struct ReenactorModel {
    pub arch: ReenactorArch,
    pub down: Vec<Conv2d>,
    pub down_norm: Vec<Option<BatchNorm2d>>,
    pub up: Vec<ConvTranspose2d>,
    pub up_norm: Vec<Option<BatchNorm2d>>,
}

#[derive(Clone, Debug)]
pub struct ReenactorTape {
    input: Tensor,
    /// Encoder outputs per level.
    enc: Vec<Tensor>,
    down_bn: Vec<Option<BnCache>>,
    /// Decoder inputs (before the rectifier) per level.
    up_in: Vec<Tensor>,
    up_bn: Vec<Option<BnCache>>,
    output: Tensor,
}

impl ReenactorModel {
    pub fn new<R: Rng>(arch: ReenactorArch, init: Init, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let ch = arch.channels();
        let d = arch.depth;
        let mut down = Vec::with_capacity(d);
        let mut down_norm = Vec::with_capacity(d);
        for i in 0..d {
            let cin = if i == 0 { 1 } else { ch[i - 1] };
            down.push(Conv2d::new(cin, ch[i], DOWN, init, rng));
            down_norm.push((i > 0 && i + 1 < d).then(|| BatchNorm2d::new(ch[i], init, rng)));
        }
        let mut up = Vec::with_capacity(d);
        let mut up_norm = Vec::with_capacity(d);
        for i in 0..d {
            let cin = if i + 1 == d { ch[i] } else { 2 * ch[i] };
            let cout = if i == 0 { 3 } else { ch[i - 1] };
            up.push(ConvTranspose2d::new(cin, cout, DOWN, init, rng));
            up_norm.push((i > 0).then(|| BatchNorm2d::new(cout, init, rng)));
        }
        Ok(ReenactorModel {
            arch,
            down,
            down_norm,
            up,
            up_norm,
        })
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let r = self.arch.resolution;
        if x.shape()[1..] != [1, r, r] {
            return Err(Error::config(
                "reenactor",
                format!("expected 1×{r}×{r} landmark image, got {:?}", &x.shape()[1..]),
            ));
        }
        Ok(())
    }

    /// Inference-mode face for one landmark image.
    pub fn reenact(&self, landmark_image: &BinaryImage) -> Result<FaceImage> {
        let out = self.forward(&landmark_image.to_tensor())?;
        FaceImage::new(self.arch.resolution, out.into_data())
    }

    /// Inference-mode forward over a `[n, 1, R, R]` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        Ok(self.forward_eval(x, None))
    }

    /// Inference forward; `drop_skip` zeroes the encoder side of one skip connection.
    pub(crate) fn forward_eval(&self, x: &Tensor, drop_skip: Option<usize>) -> Tensor {
        let d = self.arch.depth;
        let mut enc: Vec<Tensor> = Vec::with_capacity(d);
        enc.push(self.down[0].forward(x));
        for i in 1..d {
            let z = self.down[i].forward(&leaky_relu(&enc[i - 1], LEAKY_SLOPE));
            enc.push(match &self.down_norm[i] {
                Some(bn) => bn.forward_eval(&z),
                None => z,
            });
        }
        let mut u = enc[d - 1].clone();
        for i in (0..d).rev() {
            let inp = if i + 1 == d {
                u
            } else {
                let skip = if drop_skip == Some(i) {
                    Tensor::zeros(enc[i].shape())
                } else {
                    enc[i].clone()
                };
                Tensor::concat_channels(&skip, &u)
            };
            let z = self.up[i].forward(&relu(&inp));
            u = match &self.up_norm[i] {
                Some(bn) => bn.forward_eval(&z),
                None => tanh(&z),
            };
        }
        u
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, ReenactorTape)> {
        self.check(x)?;
        let d = self.arch.depth;
        let mut enc = Vec::with_capacity(d);
        let mut down_bn = Vec::with_capacity(d);
        let e0 = self.down[0].forward(x);
        down_bn.push(None);
        enc.push(e0);
        for i in 1..d {
            let z = self.down[i].forward(&leaky_relu(&enc[i - 1], LEAKY_SLOPE));
            let (e, cache) = match &mut self.down_norm[i] {
                Some(bn) => {
                    let (y, c) = bn.forward_train(&z);
                    (y, Some(c))
                }
                None => (z, None),
            };
            down_bn.push(cache);
            enc.push(e);
        }
        let mut up_in = vec![Tensor::zeros([0, 0, 0, 0]); d];
        let mut up_bn: Vec<Option<BnCache>> = vec![None; d];
        let mut u = enc[d - 1].clone();
        for i in (0..d).rev() {
            let inp = if i + 1 == d {
                u
            } else {
                Tensor::concat_channels(&enc[i], &u)
            };
            let z = self.up[i].forward(&relu(&inp));
            up_in[i] = inp;
            u = match &mut self.up_norm[i] {
                Some(bn) => {
                    let (y, c) = bn.forward_train(&z);
                    up_bn[i] = Some(c);
                    y
                }
                None => tanh(&z),
            };
        }
        let tape = ReenactorTape {
            input: x.clone(),
            enc,
            down_bn,
            up_in,
            up_bn,
            output: u.clone(),
        };
        Ok((u, tape))
    }

    /// Accumulates parameter gradients for `d_out` (gradient w.r.t. the generated batch).
    pub fn backward(&mut self, tape: &ReenactorTape, d_out: &Tensor) {
        let d = self.arch.depth;
        let ch = self.arch.channels();
        let mut d_enc: Vec<Option<Tensor>> = vec![None; d];
        let mut d_u = d_out.clone();
        for i in 0..d {
            let dz = match (&mut self.up_norm[i], &tape.up_bn[i]) {
                (Some(bn), Some(cache)) => bn.backward(cache, &d_u, Backprop::FULL).expect("input grad"),
                _ => tanh_backward(&tape.output, &d_u),
            };
            let r = relu(&tape.up_in[i]);
            let d_r = self.up[i].backward(&r, &dz, Backprop::FULL).expect("input grad");
            let d_inp = relu_backward(&tape.up_in[i], &d_r);
            if i + 1 == d {
                accumulate(&mut d_enc[i], d_inp);
            } else {
                let (de, du) = d_inp.split_channels(ch[i]);
                accumulate(&mut d_enc[i], de);
                d_u = du;
            }
        }
        for i in (1..d).rev() {
            let g = d_enc[i].take().expect("encoder gradient");
            let dz = match (&mut self.down_norm[i], &tape.down_bn[i]) {
                (Some(bn), Some(cache)) => bn.backward(cache, &g, Backprop::FULL).expect("input grad"),
                _ => g,
            };
            let a = leaky_relu(&tape.enc[i - 1], LEAKY_SLOPE);
            let da = self.down[i].backward(&a, &dz, Backprop::FULL).expect("input grad");
            let de = leaky_relu_backward(&tape.enc[i - 1], &da, LEAKY_SLOPE);
            accumulate(&mut d_enc[i - 1], de);
        }
        let g0 = d_enc[0].take().expect("encoder gradient");
        self.down[0].backward(&tape.input, &g0, Backprop::PARAMS_ONLY);
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, c) in self.down.iter().enumerate() {
            out.push((format!("down.{i}.weight"), &c.weight));
            out.push((format!("down.{i}.bias"), &c.bias));
            if let Some(bn) = &self.down_norm[i] {
                out.push((format!("down_norm.{i}.gamma"), &bn.gamma));
                out.push((format!("down_norm.{i}.beta"), &bn.beta));
            }
        }
        for (i, c) in self.up.iter().enumerate() {
            out.push((format!("up.{i}.weight"), &c.weight));
            out.push((format!("up.{i}.bias"), &c.bias));
            if let Some(bn) = &self.up_norm[i] {
                out.push((format!("up_norm.{i}.gamma"), &bn.gamma));
                out.push((format!("up_norm.{i}.beta"), &bn.beta));
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    /// Same order as [`ReenactorModel::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for (c, bn) in self.down.iter_mut().zip(self.down_norm.iter_mut()) {
            out.extend(c.params_mut());
            if let Some(bn) = bn {
                out.extend(bn.params_mut());
            }
        }
        for (c, bn) in self.up.iter_mut().zip(self.up_norm.iter_mut()) {
            out.extend(c.params_mut());
            if let Some(bn) = bn {
                out.extend(bn.params_mut());
            }
        }
        out
    }

    pub fn norms_mut(&mut self) -> Vec<(String, &mut BatchNorm2d)> {
        let mut out = Vec::new();
        for (i, bn) in self.down_norm.iter_mut().enumerate() {
            if let Some(bn) = bn {
                out.push((format!("down_norm.{i}"), bn));
            }
        }
        for (i, bn) in self.up_norm.iter_mut().enumerate() {
            if let Some(bn) = bn {
                out.push((format!("up_norm.{i}"), bn));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Conditional patch discriminator over `[landmark image, face]` (4 channels).
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDiscriminator {
    pub resolution: usize,
    pub convs: Vec<Conv2d>,
    pub norms: Vec<Option<BatchNorm2d>>,
}

#[derive(Clone, Debug)]
pub struct PatchTape {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    bn: Vec<Option<BnCache>>,
}

impl PatchDiscriminator {
    pub fn new<R: Rng>(arch: &ReenactorArch, init: Init, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let base = arch.disc_base_channels;
        let cap = 8 * base;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut ch = 4;
        for j in 0..arch.disc_strided_layers {
            let out = (base << j).min(cap);
            convs.push(Conv2d::new(ch, out, DOWN, init, rng));
            norms.push((j > 0).then(|| BatchNorm2d::new(out, init, rng)));
            ch = out;
        }
        let out = (base << arch.disc_strided_layers).min(cap);
        convs.push(Conv2d::new(ch, out, FLAT, init, rng));
        norms.push(Some(BatchNorm2d::new(out, init, rng)));
        convs.push(Conv2d::new(out, 1, FLAT, init, rng));
        norms.push(None);
        Ok(PatchDiscriminator {
            resolution: arch.resolution,
            convs,
            norms,
        })
    }

    fn input(&self, landmarks: &Tensor, faces: &Tensor) -> Result<Tensor> {
        let r = self.resolution;
        if landmarks.shape()[1..] != [1, r, r] || faces.shape()[1..] != [3, r, r] || landmarks.n() != faces.n() {
            return Err(Error::config(
                "patch discriminator",
                format!(
                    "expected 1×{r}×{r} landmarks and 3×{r}×{r} faces, got {:?} and {:?}",
                    landmarks.shape(),
                    faces.shape()
                ),
            ));
        }
        Ok(Tensor::concat_channels(landmarks, faces))
    }

    fn last(&self, i: usize) -> bool {
        i + 1 == self.convs.len()
    }

    /// Inference-mode logit map for one pair.
    pub fn discriminate_patches(&self, landmark_image: &BinaryImage, face: &FaceImage) -> Result<Tensor> {
        self.forward(&landmark_image.to_tensor(), &face.to_tensor())
    }

    pub fn forward(&self, landmarks: &Tensor, faces: &Tensor) -> Result<Tensor> {
        let mut x = self.input(landmarks, faces)?;
        for (i, conv) in self.convs.iter().enumerate() {
            let mut z = conv.forward(&x);
            if let Some(bn) = &self.norms[i] {
                z = bn.forward_eval(&z);
            }
            x = if self.last(i) { z } else { leaky_relu(&z, LEAKY_SLOPE) };
        }
        Ok(x)
    }

    pub fn forward_train(&mut self, landmarks: &Tensor, faces: &Tensor) -> Result<(Tensor, PatchTape)> {
        let mut x = self.input(landmarks, faces)?;
        let n = self.convs.len();
        let mut tape = PatchTape {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            bn: Vec::with_capacity(n),
        };
        for i in 0..n {
            let mut z = self.convs[i].forward(&x);
            let mut cache = None;
            if let Some(bn) = &mut self.norms[i] {
                let (y, c) = bn.forward_train(&z);
                z = y;
                cache = Some(c);
            }
            let next = if i + 1 == n { z.clone() } else { leaky_relu(&z, LEAKY_SLOPE) };
            tape.inputs.push(x);
            tape.pre.push(z);
            tape.bn.push(cache);
            x = next;
        }
        Ok((x, tape))
    }

    /// Returns the gradient w.r.t. the face channels when `bp.input` is set.
    pub fn backward(&mut self, tape: &PatchTape, d_logits: &Tensor, bp: Backprop) -> Option<Tensor> {
        let n = self.convs.len();
        let mut g = d_logits.clone();
        for i in (0..n).rev() {
            if i + 1 < n {
                g = leaky_relu_backward(&tape.pre[i], &g, LEAKY_SLOPE);
            }
            if let (Some(bn), Some(cache)) = (&mut self.norms[i], &tape.bn[i]) {
                g = bn
                    .backward(cache, &g, Backprop { params: bp.params, input: true })
                    .expect("input grad");
            }
            let stage_bp = Backprop {
                params: bp.params,
                input: i > 0 || bp.input,
            };
            match self.convs[i].backward(&tape.inputs[i], &g, stage_bp) {
                Some(d) => g = d,
                None => return None,
            }
        }
        Some(g.split_channels(1).1)
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv.{i}.weight"), &c.weight));
            out.push((format!("conv.{i}.bias"), &c.bias));
            if let Some(bn) = &self.norms[i] {
                out.push((format!("norm.{i}.gamma"), &bn.gamma));
                out.push((format!("norm.{i}.beta"), &bn.beta));
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for (c, bn) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            out.extend(c.params_mut());
            if let Some(bn) = bn {
                out.extend(bn.params_mut());
            }
        }
        out
    }

    pub fn norms_mut(&mut self) -> Vec<(String, &mut BatchNorm2d)> {
        self.norms
            .iter_mut()
            .enumerate()
            .filter_map(|(i, bn)| bn.as_mut().map(|b| (format!("norm.{i}"), b)))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }
}
