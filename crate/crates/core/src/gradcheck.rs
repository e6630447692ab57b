//! Central finite-difference checks of every training gradient on micro
//! networks. Loss values for the numerical side are recomputed from the
//! plain value functions, so the weighting and pixel scaling of the
//! objectives are checked along with the backward passes.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{IndexGroups, LandmarkDiscriminator, PredictorArch, PredictorInput, PredictorModel};
use crate::nn::{Adam, AdamConfig, Init, Param, Tensor};
use crate::objectives::{
    gan_d_loss, gan_d_loss_grad, gan_g_loss, l1_loss, l1_loss_grad, masked_l1_batch, PredictorWeights,
    ReenactorWeights,
};
use crate::reenact::{PatchDiscriminator, ReenactorArch, ReenactorModel};
use crate::train::{PredictorTrainer, ReenactorTrainer};

/// Central difference step.
pub const FD_STEP: f64 = 1e-5;
/// Entries sampled per parameter tensor.
pub const ENTRIES_PER_TENSOR: usize = 32;
/// One-sided slopes disagreeing by more than this fraction mark a kink
/// (a leaky-rectifier or absolute-value breakpoint inside the step).
pub const KINK_TOLERANCE: f64 = 1e-3;
/// Rounding noise of a difference quotient, in units of `ε·|loss| / step`.
const NOISE_ULPS: f64 = 64.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    /// Largest norm-wise relative error over the checked tensors.
    pub max_rel_error: f64,
    /// Tensor where the largest error occurred.
    pub worst: String,
    pub tensors: usize,
    /// Probed entries, including skipped kinks.
    pub entries: usize,
    /// Entries whose step straddles a breakpoint; not scored.
    #[serde(default)]
    pub kinks: usize,
}

impl GradCheck {
    /// Error below `tol`, something scored, and at most a quarter of entries skipped.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite()
            && self.max_rel_error < tol
            && self.entries > self.kinks
            && 4 * self.kinks <= self.entries
    }
}

/// Norm-wise relative error; `None` when both gradients are within `floor` of zero.
fn rel_error(a: &[f64], n: &[f64], floor: f64) -> Option<f64> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    (scale > floor).then(|| norm(&diff) / scale)
}

/// Central difference of one probed entry, or `None` at a kink.
fn central(l0: f64, lp: f64, lm: f64) -> Option<f64> {
    let fwd = (lp - l0) / FD_STEP;
    let bwd = (l0 - lm) / FD_STEP;
    let noise = NOISE_ULPS * f64::EPSILON * l0.abs().max(1.0) / FD_STEP;
    let smooth = (fwd - bwd).abs() <= KINK_TOLERANCE * fwd.abs().max(bwd.abs()) + noise;
    smooth.then(|| (lp - lm) / (2.0 * FD_STEP))
}

struct Tally {
    name: String,
    max: f64,
    worst: String,
    tensors: usize,
    entries: usize,
    kinks: usize,
    noise: f64,
}

impl Tally {
    fn new(name: &str, l0: f64) -> Self {
        Tally {
            name: name.to_string(),
            max: 0.0,
            worst: String::new(),
            tensors: 0,
            entries: 0,
            kinks: 0,
            noise: NOISE_ULPS * f64::EPSILON * l0.abs().max(1.0) / FD_STEP,
        }
    }

    fn add(&mut self, tensor: &str, analytic: &[f64], numeric: &[Option<f64>]) {
        self.entries += analytic.len();
        self.tensors += 1;
        let (a, n): (Vec<f64>, Vec<f64>) = analytic
            .iter()
            .zip(numeric)
            .filter_map(|(&a, n)| n.map(|n| (a, n)))
            .unzip();
        self.kinks += analytic.len() - a.len();
        let floor = self.noise * (a.len() as f64).sqrt();
        if let Some(e) = rel_error(&a, &n, floor) {
            if !(e <= self.max) {
                self.max = e;
                self.worst = tensor.to_string();
            }
        }
    }

    fn finish(self) -> GradCheck {
        GradCheck {
            name: self.name,
            max_rel_error: self.max,
            worst: self.worst,
            tensors: self.tensors,
            entries: self.entries,
            kinks: self.kinks,
        }
    }
}

fn pick<R: Rng>(len: usize, rng: &mut R) -> Vec<usize> {
    if len <= ENTRIES_PER_TENSOR {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, ENTRIES_PER_TENSOR).into_vec();
        v.sort_unstable();
        v
    }
}

/// Compares stored parameter gradients against central differences of `loss`.
fn check_params<M, P, L>(name: &str, m: &mut M, names: Vec<String>, params: P, loss: L, seed: u64) -> Result<GradCheck>
where
    P: Fn(&mut M) -> Vec<&mut Param>,
    L: Fn(&mut M) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let analytic: Vec<Vec<f64>> = params(m).iter().map(|p| p.grad.clone()).collect();
    let l0 = loss(m)?;
    let mut tally = Tally::new(name, l0);
    for (t, tensor) in names.iter().enumerate() {
        let idx = pick(analytic[t].len(), &mut rng);
        let mut a = Vec::with_capacity(idx.len());
        let mut n = Vec::with_capacity(idx.len());
        for j in idx {
            let orig = params(m)[t].value[j];
            params(m)[t].value[j] = orig + FD_STEP;
            let lp = loss(m)?;
            params(m)[t].value[j] = orig - FD_STEP;
            let lm = loss(m)?;
            params(m)[t].value[j] = orig;
            a.push(analytic[t][j]);
            n.push(central(l0, lp, lm));
        }
        tally.add(tensor, &a, &n);
    }
    Ok(tally.finish())
}

/// Compares an input gradient against central differences of `loss`.
fn check_input(name: &str, x: &Tensor, analytic: &Tensor, loss: impl Fn(&Tensor) -> Result<f64>) -> Result<GradCheck> {
    let l0 = loss(x)?;
    let mut numeric = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let orig = probe.data()[j];
        probe.data_mut()[j] = orig + FD_STEP;
        let lp = loss(&probe)?;
        probe.data_mut()[j] = orig - FD_STEP;
        let lm = loss(&probe)?;
        probe.data_mut()[j] = orig;
        numeric.push(central(l0, lp, lm));
    }
    let mut tally = Tally::new(name, l0);
    tally.add("input", analytic.data(), &numeric);
    Ok(tally.finish())
}

/// Tiny predictor: 4×4 MFCC grid, 4 landmarks on a 16 px frame, widths ≤ 8.
pub fn micro_predictor_arch() -> PredictorArch {
    PredictorArch {
        mfcc_frames: 4,
        mfcc_coeffs: 4,
        step_channels: vec![2, 3],
        time_channels: 2,
        time_layers: 1,
        audio_features: 4,
        pose_widths: vec![4],
        blink_widths: vec![3],
        fusion_hidden: 6,
        landmarks: 4,
        groups: IndexGroups {
            left_eye: vec![0],
            right_eye: vec![1],
            mouth: vec![2],
            contour: vec![3],
        },
        resolution: 16,
        discriminator_widths: vec![8, 4],
    }
}

/// Tiny reenactor: 8 px, two encoder levels, 4 channels, 2×2 patch grid.
pub fn micro_reenactor_arch() -> ReenactorArch {
    ReenactorArch {
        resolution: 8,
        depth: 2,
        base_channels: 4,
        max_channels: 4,
        disc_base_channels: 4,
        disc_strided_layers: 1,
    }
}

const BATCH: usize = 3;
// Larger than the training init so every layer carries a well-scaled signal.
const MICRO_INIT: Init = Init::Normal { std: 0.3 };

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

fn names(v: Vec<(String, &Param)>) -> Vec<String> {
    v.into_iter().map(|(n, _)| n).collect()
}

struct PredictorFixture {
    t: PredictorTrainer,
    input: PredictorInput,
    gt: Tensor,
}

fn predictor_fixture(seed: u64) -> Result<PredictorFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = micro_predictor_arch();
    let mut model = PredictorModel::new(arch.clone(), MICRO_INIT, &mut rng)?;
    model.template = vec![0.5; 2 * arch.landmarks];
    let disc = LandmarkDiscriminator::new(&arch, MICRO_INIT, &mut rng);
    let adam = AdamConfig::new(3e-4, 0.99, 0.999);
    let t = PredictorTrainer {
        identity: "micro".into(),
        opt_g: Adam::new(adam, &model.params()),
        opt_d: Adam::new(adam, &disc.params()),
        model,
        disc,
        epoch: 0,
    };
    let input = PredictorInput {
        audio: uniform(&mut rng, [BATCH, 1, arch.mfcc_frames, arch.mfcc_coeffs], -2.0, 2.0),
        pose: uniform(&mut rng, [BATCH, 3, 1, 1], -0.5, 0.5),
        blink: uniform(&mut rng, [BATCH, 2, 1, 1], 0.0, 0.5),
    };
    let gt = uniform(&mut rng, [BATCH, 2 * arch.landmarks, 1, 1], 0.2, 0.8);
    Ok(PredictorFixture { t, input, gt })
}

struct ReenactorFixture {
    t: ReenactorTrainer,
    x: Tensor,
    real: Tensor,
    masks: Tensor,
}

fn reenactor_fixture(seed: u64) -> Result<ReenactorFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = micro_reenactor_arch();
    let model = ReenactorModel::new(arch.clone(), MICRO_INIT, &mut rng)?;
    let disc = PatchDiscriminator::new(&arch, MICRO_INIT, &mut rng)?;
    let adam = AdamConfig::new(2e-4, 0.5, 0.999);
    let t = ReenactorTrainer {
        identity: "micro".into(),
        opt_g: Adam::new(adam, &model.params()),
        opt_d: Adam::new(adam, &disc.params()),
        model,
        disc,
        epoch: 0,
    };
    let r = arch.resolution;
    let n = BATCH * r * r;
    let x = Tensor::from_vec(
        [BATCH, 1, r, r],
        (0..n).map(|_| if rng.gen_bool(0.2) { 1.0 } else { -1.0 }).collect(),
    );
    let real = uniform(&mut rng, [BATCH, 3, r, r], -1.0, 1.0);
    let masks = Tensor::from_vec([BATCH, 1, r, r], (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect());
    Ok(ReenactorFixture { t, x, real, masks })
}

/// Value of the masked L1 written out directly: masked absolute error over
/// (white pixels × channels), pooled over the batch.
fn masked_l1_value(a: &Tensor, b: &Tensor, masks: &Tensor) -> f64 {
    let [n, c, h, w] = a.shape();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for ch in 0..c {
            for p in 0..h * w {
                let m = masks.sample(i)[p];
                num += m * (a.sample(i)[ch * h * w + p] - b.sample(i)[ch * h * w + p]).abs();
                den += m;
            }
        }
    }
    num / den
}

fn l1_check(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform(&mut rng, [2, 3, 4, 4], -1.0, 1.0);
    let b = uniform(&mut rng, [2, 3, 4, 4], -1.0, 1.0);
    let (_, g) = l1_loss_grad(&a, &b)?;
    check_input("l1", &a, &g, |x| l1_loss(x, &b))
}

fn masked_l1_check(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform(&mut rng, [2, 3, 5, 5], -1.0, 1.0);
    let b = uniform(&mut rng, [2, 3, 5, 5], -1.0, 1.0);
    let masks = Tensor::from_vec([2, 1, 5, 5], (0..50).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect());
    let (_, g) = masked_l1_batch(&a, &b, &masks)?;
    check_input("masked_l1", &a, &g, |x| Ok(masked_l1_value(x, &b, &masks)))
}

fn landmark_d_check(seed: u64) -> Result<GradCheck> {
    let PredictorFixture { mut t, input, gt } = predictor_fixture(seed)?;
    let (fake, _) = t.model.forward_train(&input)?;
    t.discriminator_backward(&gt, &fake)?;
    let n = names(t.disc.named_params());
    check_params(
        "landmark_discriminator_loss",
        &mut t,
        n,
        |t| t.disc.params_mut(),
        |t| {
            let lr = t.disc.forward(&t.disc.to_pixels(&gt))?;
            let lf = t.disc.forward(&t.disc.to_pixels(&fake))?;
            gan_d_loss(&lr, &lf)
        },
        seed,
    )
}

fn predictor_g_check(name: &str, seed: u64, w: PredictorWeights) -> Result<GradCheck> {
    let PredictorFixture { mut t, input, gt } = predictor_fixture(seed)?;
    let (fake, tape) = t.model.forward_train(&input)?;
    t.generator_backward(&fake, &tape, &gt, &w, true)?;
    let n = names(t.model.named_params());
    let res = t.model.arch.resolution as f64;
    check_params(
        name,
        &mut t,
        n,
        |t| t.model.params_mut(),
        |t| {
            let (fake, _) = t.model.forward_train(&input)?;
            let logits = t.disc.forward(&t.disc.to_pixels(&fake))?;
            let mut l1 = 0.0;
            if w.l1 != 0.0 {
                l1 = l1_loss(&fake, &gt)? * res;
            }
            Ok(w.l1 * l1 + w.adversarial * gan_g_loss(&logits)?)
        },
        seed,
    )
}

fn patch_d_check(seed: u64) -> Result<GradCheck> {
    let ReenactorFixture { mut t, x, real, .. } = reenactor_fixture(seed)?;
    let (fake, _) = t.model.forward_train(&x)?;
    t.discriminator_backward(&x, &real, &fake)?;
    let n = names(t.disc.named_params());
    check_params(
        "patch_discriminator_loss",
        &mut t,
        n,
        |t| t.disc.params_mut(),
        |t| {
            let (lr, _) = t.disc.forward_train(&x, &real)?;
            let (lf, _) = t.disc.forward_train(&x, &fake)?;
            gan_d_loss(&lr, &lf)
        },
        seed,
    )
}

fn reenactor_g_check(name: &str, seed: u64, w: ReenactorWeights) -> Result<GradCheck> {
    let ReenactorFixture { mut t, x, real, masks } = reenactor_fixture(seed)?;
    let (fake, tape) = t.model.forward_train(&x)?;
    t.generator_backward(&x, &fake, &tape, &real, &masks, &w)?;
    let n = names(t.model.named_params());
    check_params(
        name,
        &mut t,
        n,
        |t| t.model.params_mut(),
        |t| {
            let (fake, _) = t.model.forward_train(&x)?;
            let (logits, _) = t.disc.forward_train(&x, &fake)?;
            Ok(w.l1 * l1_loss(&fake, &real)?
                + w.mask * masked_l1_value(&fake, &real, &masks)
                + w.adversarial * gan_g_loss(&logits)?)
        },
        seed,
    )
}

fn bce_check(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = uniform(&mut rng, [2, 1, 3, 3], -4.0, 4.0);
    let fake = uniform(&mut rng, [2, 1, 3, 3], -4.0, 4.0);
    let (_, gr, _) = gan_d_loss_grad(&real, &fake)?;
    check_input("gan_logits", &real, &gr, |z| gan_d_loss(z, &fake))
}

/// Runs every check with fixtures derived from `seed`.
pub fn run_all(seed: u64) -> Result<Vec<GradCheck>> {
    let defaults = crate::objectives::LossWeights::default();
    Ok(vec![
        l1_check(seed)?,
        masked_l1_check(seed)?,
        bce_check(seed)?,
        landmark_d_check(seed)?,
        predictor_g_check(
            "predictor_adversarial_through_landmark_discriminator",
            seed,
            PredictorWeights { l1: 0.0, adversarial: 1.0 },
        )?,
        patch_d_check(seed)?,
        reenactor_g_check(
            "reenactor_adversarial_through_patch_discriminator",
            seed,
            ReenactorWeights { l1: 0.0, mask: 0.0, adversarial: 1.0 },
        )?,
        predictor_g_check("predictor_composite", seed, defaults.predictor)?,
        reenactor_g_check("reenactor_composite", seed, defaults.reenactor)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_is_normwise() {
        assert_eq!(rel_error(&[1.0, 0.0], &[1.0, 0.0], 1e-9), Some(0.0));
        assert!((rel_error(&[3.0, 4.0], &[3.0, 4.5], 1e-9).unwrap() - 0.5 / 4.5f64.hypot(3.0)).abs() < 1e-15);
        assert_eq!(rel_error(&[0.0], &[1e-12], 1e-9), None);
    }

    #[test]
    fn kinks_are_detected() {
        // |x| probed at x = 0 has one-sided slopes −1 and +1
        let h = FD_STEP;
        assert_eq!(central(0.0, h, h), None);
        // x² at 1 is smooth
        let f = |x: f64| x * x;
        assert!((central(f(1.0), f(1.0 + h), f(1.0 - h)).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn l1_gradient_matches() {
        assert!(l1_check(1).unwrap().passes(1e-4));
    }
}
