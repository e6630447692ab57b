use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BlinkPair, IndexGroups, LandmarkSet, PoseTriple};
use crate::audio::MfccFeature;
use crate::error::{Error, Result};
use crate::nn::{Backprop, Chain, ChainTape, ConvGeom, Init, Linear, Param, Stage, Tensor};

/// Layer widths of the landmark predictor and its discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorArch {
    pub mfcc_frames: usize,
    pub mfcc_coeffs: usize,
    /// Output channels of the per-step convolutions (3×3, stride 2 along the
    /// coefficient axis on every other layer).
    pub step_channels: Vec<usize>,
    /// Channels of the time-collapsing convolutions (3×1, stride 2 along time).
    pub time_channels: usize,
    pub time_layers: usize,
    pub audio_features: usize,
    pub pose_widths: Vec<usize>,
    pub blink_widths: Vec<usize>,
    pub fusion_hidden: usize,
    pub landmarks: usize,
    pub groups: IndexGroups,
    /// Pixel scale of the landmark frame (losses and discriminator input).
    pub resolution: usize,
    pub discriminator_widths: Vec<usize>,
}

impl Default for PredictorArch {
    fn default() -> Self {
        PredictorArch {
            mfcc_frames: 16,
            mfcc_coeffs: 20,
            step_channels: vec![16, 32, 64, 64, 64],
            time_channels: 64,
            time_layers: 5,
            audio_features: 256,
            pose_widths: vec![32, 64, 64, 64],
            blink_widths: vec![32, 32, 32],
            fusion_hidden: 256,
            landmarks: 68,
            groups: IndexGroups::ibug68(),
            resolution: 256,
            discriminator_widths: vec![256, 256, 128, 128, 64, 32],
        }
    }
}

impl PredictorArch {
    /// Desk-scale preset: 20 schematic landmarks on a 64-pixel crop, widths halved.
    pub fn toy() -> Self {
        PredictorArch {
            step_channels: vec![8, 16, 16, 16, 16],
            time_channels: 16,
            audio_features: 128,
            pose_widths: vec![32, 64, 64, 64],
            blink_widths: vec![32, 32, 32],
            fusion_hidden: 128,
            landmarks: 20,
            groups: IndexGroups::toy20(),
            resolution: 64,
            discriminator_widths: vec![128, 128, 64, 64, 32, 16],
            ..PredictorArch::default()
        }
    }

    fn step_geom(i: usize) -> ConvGeom {
        ConvGeom {
            kh: 3,
            kw: 3,
            sh: 1,
            sw: if i % 2 == 0 { 2 } else { 1 },
            ph: 1,
            pw: 1,
        }
    }

    fn time_geom() -> ConvGeom {
        ConvGeom {
            kh: 3,
            kw: 1,
            sh: 2,
            sw: 1,
            ph: 1,
            pw: 0,
        }
    }

    /// `(time, coeff)` extent of the audio grid after all convolutions.
    pub fn audio_grid_out(&self) -> Result<(usize, usize)> {
        let mut dims = (self.mfcc_frames, self.mfcc_coeffs);
        for i in 0..self.step_channels.len() {
            dims = Self::step_geom(i)
                .out_dims(dims.0, dims.1)
                .ok_or_else(|| Error::config("audio", "mfcc grid too small for the step convolutions"))?;
        }
        for _ in 0..self.time_layers {
            dims = Self::time_geom()
                .out_dims(dims.0, dims.1)
                .ok_or_else(|| Error::config("audio", "mfcc grid too small for the time convolutions"))?;
        }
        Ok(dims)
    }

    pub fn pose_features(&self) -> usize {
        *self.pose_widths.last().unwrap_or(&3)
    }

    pub fn blink_features(&self) -> usize {
        *self.blink_widths.last().unwrap_or(&2)
    }

    /// Width of the concatenated branch features.
    pub fn fusion_width(&self) -> usize {
        self.audio_features + self.pose_features() + self.blink_features()
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_channels.is_empty() || self.pose_widths.is_empty() || self.blink_widths.is_empty() {
            return Err(Error::config("predictor", "every branch needs at least one layer"));
        }
        if self.landmarks == 0 || self.resolution == 0 {
            return Err(Error::config("predictor", "landmarks and resolution must be positive"));
        }
        self.groups.validate(self.landmarks)?;
        self.audio_grid_out()?;
        Ok(())
    }
}

/// Batched predictor inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorInput {
    /// `[n, 1, T, C]`
    pub audio: Tensor,
    /// `[n, 3, 1, 1]`
    pub pose: Tensor,
    /// `[n, 2, 1, 1]`
    pub blink: Tensor,
}

impl PredictorInput {
    pub fn from_samples(items: &[(&MfccFeature, PoseTriple, BlinkPair)]) -> Self {
        let (t, c) = items.first().map(|i| (i.0.frames, i.0.coeffs)).unwrap_or((0, 0));
        let audio: Vec<Vec<f64>> = items.iter().map(|i| i.0.values.clone()).collect();
        let pose: Vec<Vec<f64>> = items.iter().map(|i| i.1.to_array().to_vec()).collect();
        let blink: Vec<Vec<f64>> = items.iter().map(|i| i.2.to_array().to_vec()).collect();
        PredictorInput {
            audio: Tensor::stack(&audio, [1, t, c]),
            pose: Tensor::stack(&pose, [3, 1, 1]),
            blink: Tensor::stack(&blink, [2, 1, 1]),
        }
    }

    pub fn len(&self) -> usize {
        self.audio.n()
    }

    pub fn is_empty(&self) -> bool {
        self.audio.n() == 0
    }
}

/// Per-branch feature vectors of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchFeatures {
    pub audio: Vec<f64>,
    pub pose: Vec<f64>,
    pub blink: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PredictorTape {
    audio: ChainTape,
    pose: ChainTape,
    blink: ChainTape,
    fusion: ChainTape,
}

/// Audio/pose/blink encoders and the fusion head regressing `N × 2` landmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorModel {
    pub arch: PredictorArch,
    pub audio: Chain,
    pub pose: Chain,
    pub blink: Chain,
    pub fusion: Chain,
    /// Constant offset added to the regression output (mean training landmarks, flattened).
    pub template: Vec<f64>,
    /// Subtracted from `[yaw, pitch, roll, left blink, right blink]` before the
    /// condition branches, so their first kinks start inside the data range.
    pub condition_mean: [f64; 5],
}

impl PredictorModel {
    pub fn new<R: Rng>(arch: PredictorArch, init: Init, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut stages = Vec::new();
        let mut ch = 1;
        for (i, &out) in arch.step_channels.iter().enumerate() {
            stages.push(Chain::conv(ch, out, PredictorArch::step_geom(i), init, rng));
            ch = out;
        }
        for _ in 0..arch.time_layers {
            stages.push(Chain::conv(ch, arch.time_channels, PredictorArch::time_geom(), init, rng));
            ch = arch.time_channels;
        }
        let (t, c) = arch.audio_grid_out()?;
        stages.push(Stage::Linear(Linear::new(ch * t * c, arch.audio_features, init, rng)));
        let audio = Chain {
            stages,
            activate_last: true,
        };
        let pose_w: Vec<usize> = std::iter::once(3).chain(arch.pose_widths.iter().copied()).collect();
        let blink_w: Vec<usize> = std::iter::once(2).chain(arch.blink_widths.iter().copied()).collect();
        let pose = Chain::mlp(&pose_w, true, init, rng);
        let blink = Chain::mlp(&blink_w, true, init, rng);
        let fusion = Chain::mlp(
            &[arch.fusion_width(), arch.fusion_hidden, 2 * arch.landmarks],
            false,
            init,
            rng,
        );
        let template = vec![0.0; 2 * arch.landmarks];
        Ok(PredictorModel {
            arch,
            audio,
            pose,
            blink,
            fusion,
            template,
            condition_mean: [0.0; 5],
        })
    }

    fn check_input(&self, input: &PredictorInput) -> Result<()> {
        let a = &self.arch;
        if input.audio.shape()[1..] != [1, a.mfcc_frames, a.mfcc_coeffs] {
            return Err(Error::config(
                "audio branch",
                format!(
                    "expected 1×{}×{} mfcc grid, got {:?}",
                    a.mfcc_frames,
                    a.mfcc_coeffs,
                    &input.audio.shape()[1..]
                ),
            ));
        }
        if input.pose.sample_len() != 3 || input.pose.n() != input.len() {
            return Err(Error::config("pose branch", "expected 3 pose values per sample"));
        }
        if input.blink.sample_len() != 2 || input.blink.n() != input.len() {
            return Err(Error::config("blink branch", "expected 2 blink values per sample"));
        }
        Ok(())
    }

    /// Branch features for one sample.
    pub fn encode_branches(
        &self,
        audio: &MfccFeature,
        pose: PoseTriple,
        blink: BlinkPair,
    ) -> Result<BranchFeatures> {
        let input = PredictorInput::from_samples(&[(audio, pose, blink)]);
        self.check_input(&input)?;
        let (p, b) = self.centered(&input);
        Ok(BranchFeatures {
            audio: self.audio.forward(&input.audio).into_data(),
            pose: self.pose.forward(&p).into_data(),
            blink: self.blink.forward(&b).into_data(),
        })
    }

    pub fn predict_landmarks(
        &self,
        audio: &MfccFeature,
        pose: PoseTriple,
        blink: BlinkPair,
    ) -> Result<LandmarkSet> {
        let input = PredictorInput::from_samples(&[(audio, pose, blink)]);
        let out = self.predict_batch(&input)?;
        Ok(LandmarkSet::from_flat(out.data(), self.arch.groups.clone()))
    }

    /// Raw `[n, 2N]` normalized landmark coordinates.
    pub fn predict_batch(&self, input: &PredictorInput) -> Result<Tensor> {
        self.check_input(input)?;
        let (p, b) = self.centered(input);
        let fa = self.audio.forward(&input.audio);
        let fp = self.pose.forward(&p);
        let fb = self.blink.forward(&b);
        let fused = Tensor::concat_channels(&Tensor::concat_channels(&fa, &fp), &fb);
        Ok(self.add_template(self.fusion.forward(&fused)))
    }

    fn centered(&self, input: &PredictorInput) -> (Tensor, Tensor) {
        let shift = |t: &Tensor, mean: &[f64]| {
            let mut t = t.clone();
            for i in 0..t.n() {
                for (v, m) in t.sample_mut(i).iter_mut().zip(mean) {
                    *v -= m;
                }
            }
            t
        };
        let (p, b) = self.condition_mean.split_at(3);
        (shift(&input.pose, p), shift(&input.blink, b))
    }

    fn add_template(&self, mut out: Tensor) -> Tensor {
        for i in 0..out.n() {
            for (v, t) in out.sample_mut(i).iter_mut().zip(&self.template) {
                *v += t;
            }
        }
        out
    }

    pub fn forward_train(&self, input: &PredictorInput) -> Result<(Tensor, PredictorTape)> {
        self.check_input(input)?;
        let (p, b) = self.centered(input);
        let (fa, audio) = self.audio.forward_train(&input.audio);
        let (fp, pose) = self.pose.forward_train(&p);
        let (fb, blink) = self.blink.forward_train(&b);
        let fused = Tensor::concat_channels(&Tensor::concat_channels(&fa, &fp), &fb);
        let (out, fusion) = self.fusion.forward_train(&fused);
        Ok((
            self.add_template(out),
            PredictorTape {
                audio,
                pose,
                blink,
                fusion,
            },
        ))
    }

    /// Accumulates parameter gradients for `d_out` (gradient w.r.t. the `[n, 2N]` output).
    pub fn backward(&mut self, tape: &PredictorTape, d_out: &Tensor) {
        let d_fused = self
            .fusion
            .backward(&tape.fusion, d_out, Backprop::FULL)
            .expect("input gradient requested");
        let (d_ap, d_b) = d_fused.split_channels(self.arch.audio_features + self.arch.pose_features());
        let (d_a, d_p) = d_ap.split_channels(self.arch.audio_features);
        self.audio.backward(&tape.audio, &d_a, Backprop::PARAMS_ONLY);
        self.pose.backward(&tape.pose, &d_p, Backprop::PARAMS_ONLY);
        self.blink.backward(&tape.blink, &d_b, Backprop::PARAMS_ONLY);
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (prefix, chain) in [
            ("audio", &self.audio),
            ("pose", &self.pose),
            ("blink", &self.blink),
            ("fusion", &self.fusion),
        ] {
            out.extend(named(prefix, chain));
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.audio.params_mut();
        out.extend(self.pose.params_mut());
        out.extend(self.blink.params_mut());
        out.extend(self.fusion.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }
}

pub(crate) fn named<'a>(prefix: &str, chain: &'a Chain) -> Vec<(String, &'a Param)> {
    let mut out = Vec::new();
    for (i, s) in chain.stages.iter().enumerate() {
        let ps = s.params();
        out.push((format!("{prefix}.{i}.weight"), ps[0]));
        out.push((format!("{prefix}.{i}.bias"), ps[1]));
    }
    out
}

/// Seven fully connected layers judging a flattened pixel-unit landmark vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkDiscriminator {
    pub landmarks: usize,
    pub resolution: usize,
    pub net: Chain,
}

impl LandmarkDiscriminator {
    pub fn new<R: Rng>(arch: &PredictorArch, init: Init, rng: &mut R) -> Self {
        let widths: Vec<usize> = std::iter::once(2 * arch.landmarks)
            .chain(arch.discriminator_widths.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        LandmarkDiscriminator {
            landmarks: arch.landmarks,
            resolution: arch.resolution,
            net: Chain::mlp(&widths, false, init, rng),
        }
    }

    /// Converts normalized `[n, 2N]` coordinates to the pixel-unit discriminator input.
    pub fn to_pixels(&self, normalized: &Tensor) -> Tensor {
        let s = self.resolution as f64;
        normalized.map(|v| v * s)
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.sample_len() != 2 * self.landmarks {
            return Err(Error::config(
                "landmark discriminator",
                format!("expected width {}, got {}", 2 * self.landmarks, x.sample_len()),
            ));
        }
        Ok(())
    }

    /// Logit for one landmark set.
    pub fn discriminate(&self, l: &LandmarkSet) -> Result<f64> {
        let x = self.to_pixels(&Tensor::from_vec([1, l.len() * 2, 1, 1], l.flat()));
        self.check(&x)?;
        Ok(self.net.forward(&x).data()[0])
    }

    /// `[n, 1]` logits for pixel-unit inputs.
    pub fn forward(&self, pixels: &Tensor) -> Result<Tensor> {
        self.check(pixels)?;
        Ok(self.net.forward(pixels))
    }

    pub fn forward_train(&self, pixels: &Tensor) -> Result<(Tensor, ChainTape)> {
        self.check(pixels)?;
        Ok(self.net.forward_train(pixels))
    }

    pub fn backward(&mut self, tape: &ChainTape, d_logits: &Tensor, bp: Backprop) -> Option<Tensor> {
        self.net.backward(tape, d_logits, bp)
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        named("net", &self.net)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }
}
