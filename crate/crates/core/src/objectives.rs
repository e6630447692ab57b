//! Losses: L1, masked L1, logit-space GAN objectives and the two weighted
//! composites used to train the landmark predictor and the reenactor.
//!
//! Every loss comes with its gradient so the trainers and the
//! finite-difference checks share one code path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;
use crate::nn::Tensor;
use crate::reenact::FaceImage;
use crate::render::MaskImage;

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn finite(t: &Tensor, what: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute difference.
pub fn l1_loss(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b, "l1 loss")?;
    if a.is_empty() {
        return Err(Error::Shape("l1 loss of empty tensors".into()));
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(s / a.len() as f64)
}

/// [`l1_loss`] and its gradient with respect to `a`.
pub fn l1_loss_grad(a: &Tensor, b: &Tensor) -> Result<(f64, Tensor)> {
    let v = l1_loss(a, b)?;
    let k = 1.0 / a.len() as f64;
    let g = a.data().iter().zip(b.data()).map(|(x, y)| k * sign(x - y)).collect();
    Ok((v, Tensor::from_vec(a.shape(), g)))
}

/// Mean absolute difference over mask-white pixels, normalized by
/// white-pixel count times channels.
pub fn masked_l1_loss(a: &FaceImage, b: &FaceImage, mask: &MaskImage) -> Result<f64> {
    if a.size() != b.size() || a.size() != mask.size() {
        return Err(Error::Shape(format!(
            "masked l1 loss: sizes {}, {} and mask {}",
            a.size(),
            b.size(),
            mask.size()
        )));
    }
    let masks = Tensor::from_vec([1, 1, mask.size(), mask.size()], mask.to_mask_values());
    masked_l1_batch(&a.to_tensor(), &b.to_tensor(), &masks).map(|(v, _)| v)
}

/// Batched masked L1 over `[n, c, h, w]` images and `[n, 1, h, w]` 0/1 masks,
/// normalized by the total white count times channels; returns the gradient
/// with respect to `a`.
pub fn masked_l1_batch(a: &Tensor, b: &Tensor, masks: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(a, b, "masked l1 loss")?;
    let [n, c, h, w] = a.shape();
    if masks.shape() != [n, 1, h, w] {
        return Err(Error::Shape(format!(
            "masked l1 loss: mask shape {:?} for images {:?}",
            masks.shape(),
            a.shape()
        )));
    }
    let white: f64 = masks.data().iter().filter(|m| **m > 0.5).count() as f64;
    if white == 0.0 {
        return Err(Error::EmptyMask);
    }
    let norm = 1.0 / (white * c as f64);
    let hw = h * w;
    let mut sum = 0.0;
    let mut grad = Tensor::zeros(a.shape());
    for i in 0..n {
        let (ai, bi, mi) = (a.sample(i), b.sample(i), masks.sample(i));
        let gi = grad.sample_mut(i);
        for ch in 0..c {
            for p in 0..hw {
                if mi[p] > 0.5 {
                    let d = ai[ch * hw + p] - bi[ch * hw + p];
                    sum += d.abs();
                    gi[ch * hw + p] = norm * sign(d);
                }
            }
        }
    }
    // divide (not multiply by `norm`) so a full mask reproduces l1_loss bit for bit
    Ok((sum / (white * c as f64), grad))
}

/// Binary cross-entropy on a logit, `max(z, 0) − z·t + ln(1 + e^−|z|)`.
pub fn bce_with_logits(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean BCE over a logit map and its gradient.
fn bce_mean(logits: &Tensor, target: f64) -> (f64, Tensor) {
    let k = 1.0 / logits.len() as f64;
    let v = logits.data().iter().map(|z| bce_with_logits(*z, target)).sum::<f64>() * k;
    (v, logits.map(|z| k * (sigmoid(z) - target)))
}

/// `½[BCE(real, 1) + BCE(fake, 0)]`, each averaged over its map.
pub fn gan_d_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<f64> {
    gan_d_loss_grad(real_logits, fake_logits).map(|(v, _, _)| v)
}

/// [`gan_d_loss`] and its gradients with respect to the real and fake logits.
pub fn gan_d_loss_grad(real_logits: &Tensor, fake_logits: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    finite(real_logits, "real logits")?;
    finite(fake_logits, "fake logits")?;
    if real_logits.is_empty() || fake_logits.is_empty() {
        return Err(Error::Shape("gan loss of empty logits".into()));
    }
    let (lr, mut gr) = bce_mean(real_logits, 1.0);
    let (lf, mut gf) = bce_mean(fake_logits, 0.0);
    gr.scale(0.5);
    gf.scale(0.5);
    Ok((0.5 * (lr + lf), gr, gf))
}

/// Non-saturating generator objective `BCE(fake, 1)`.
pub fn gan_g_loss(fake_logits: &Tensor) -> Result<f64> {
    gan_g_loss_grad(fake_logits).map(|(v, _)| v)
}

pub fn gan_g_loss_grad(fake_logits: &Tensor) -> Result<(f64, Tensor)> {
    finite(fake_logits, "fake logits")?;
    if fake_logits.is_empty() {
        return Err(Error::Shape("gan loss of empty logits".into()));
    }
    Ok(bce_mean(fake_logits, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorWeights {
    pub l1: f64,
    pub adversarial: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReenactorWeights {
    pub l1: f64,
    pub mask: f64,
    pub adversarial: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub predictor: PredictorWeights,
    pub reenactor: ReenactorWeights,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            predictor: PredictorWeights {
                l1: 100.0,
                adversarial: 0.1,
            },
            reenactor: ReenactorWeights {
                l1: 100.0,
                mask: 100.0,
                adversarial: 1.0,
            },
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let p = self.predictor;
        let r = self.reenactor;
        for v in [p.l1, p.adversarial, r.l1, r.mask, r.adversarial] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config("loss weights", "weights must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    pub weight: f64,
    pub value: f64,
}

/// Named loss terms and their weighted total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: Vec<LossTerm>,
    pub total: f64,
}

impl LossReport {
    pub fn new(terms: Vec<LossTerm>) -> Result<Self> {
        let total = terms.iter().map(|t| t.weight * t.value).sum();
        let r = LossReport { terms, total };
        r.check()?;
        Ok(r)
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    /// Finite terms and `total = Σ weight·value` within 1e-9 relative.
    pub fn check(&self) -> Result<()> {
        if self.terms.iter().any(|t| !t.value.is_finite() || !t.weight.is_finite()) || !self.total.is_finite() {
            return Err(Error::NonFinite("loss report".into()));
        }
        let sum: f64 = self.terms.iter().map(|t| t.weight * t.value).sum();
        if (sum - self.total).abs() > 1e-9 * sum.abs().max(self.total.abs()).max(1e-300) {
            return Err(Error::InvalidArgument(format!(
                "loss total {} does not recompose to {}",
                self.total, sum
            )));
        }
        Ok(())
    }
}

/// Predictor objective and the gradients the trainer needs.
#[derive(Clone, Debug)]
pub struct PredictorLoss {
    pub report: LossReport,
    /// Gradient of the total w.r.t. the normalized predicted landmarks.
    pub d_pred: Tensor,
    /// Gradient of the total w.r.t. the discriminator's fake logits, if present.
    pub d_fake_logits: Option<Tensor>,
}

/// `λ1·L1(pixels) + λ2·g_loss` over `[n, 2N, 1, 1]` normalized landmark batches.
pub fn predictor_objective(
    pred: &Tensor,
    gt: &Tensor,
    fake_logits: Option<&Tensor>,
    resolution: usize,
    w: &PredictorWeights,
) -> Result<PredictorLoss> {
    let r = resolution as f64;
    let mut pred_px = pred.clone();
    pred_px.scale(r);
    let mut gt_px = gt.clone();
    gt_px.scale(r);
    let (l1, mut d_pred) = l1_loss_grad(&pred_px, &gt_px)?;
    d_pred.scale(w.l1 * r);
    let mut terms = vec![LossTerm {
        name: "l1_px".into(),
        weight: w.l1,
        value: l1,
    }];
    let d_fake_logits = match fake_logits {
        Some(z) => {
            let (g, mut dz) = gan_g_loss_grad(z)?;
            dz.scale(w.adversarial);
            terms.push(LossTerm {
                name: "adversarial".into(),
                weight: w.adversarial,
                value: g,
            });
            Some(dz)
        }
        None => None,
    };
    Ok(PredictorLoss {
        report: LossReport::new(terms)?,
        d_pred,
        d_fake_logits,
    })
}

/// Single-sample predictor loss report.
pub fn predictor_loss(
    pred: &LandmarkSet,
    gt: &LandmarkSet,
    fake_logit: f64,
    resolution: usize,
    weights: &LossWeights,
) -> Result<LossReport> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "predictor loss: {} vs {} landmarks",
            pred.len(),
            gt.len()
        )));
    }
    let n = 2 * pred.len();
    let p = Tensor::from_vec([1, n, 1, 1], pred.flat());
    let g = Tensor::from_vec([1, n, 1, 1], gt.flat());
    let z = Tensor::from_vec([1, 1, 1, 1], vec![fake_logit]);
    Ok(predictor_objective(&p, &g, Some(&z), resolution, &weights.predictor)?.report)
}

#[derive(Clone, Debug)]
pub struct ReenactorLoss {
    pub report: LossReport,
    /// Gradient of the total w.r.t. the generated faces.
    pub d_pred: Tensor,
    pub d_fake_logits: Option<Tensor>,
}

/// `λ1·L1 + λ2·masked L1 + λ3·g_loss` over `[n, 3, R, R]` face batches.
pub fn reenactor_objective(
    pred: &Tensor,
    gt: &Tensor,
    masks: &Tensor,
    fake_logits: Option<&Tensor>,
    w: &ReenactorWeights,
) -> Result<ReenactorLoss> {
    let (l1, mut d_pred) = l1_loss_grad(pred, gt)?;
    d_pred.scale(w.l1);
    let (ml1, mut d_mask) = masked_l1_batch(pred, gt, masks)?;
    d_mask.scale(w.mask);
    d_pred.add_assign(&d_mask);
    let mut terms = vec![
        LossTerm {
            name: "l1".into(),
            weight: w.l1,
            value: l1,
        },
        LossTerm {
            name: "masked_l1".into(),
            weight: w.mask,
            value: ml1,
        },
    ];
    let d_fake_logits = match fake_logits {
        Some(z) => {
            let (g, mut dz) = gan_g_loss_grad(z)?;
            dz.scale(w.adversarial);
            terms.push(LossTerm {
                name: "adversarial".into(),
                weight: w.adversarial,
                value: g,
            });
            Some(dz)
        }
        None => None,
    };
    Ok(ReenactorLoss {
        report: LossReport::new(terms)?,
        d_pred,
        d_fake_logits,
    })
}

/// Single-sample reenactor loss report over a patch logit map.
pub fn reenactor_loss(
    pred: &FaceImage,
    gt: &FaceImage,
    mask: &MaskImage,
    fake_logit_map: &Tensor,
    weights: &LossWeights,
) -> Result<LossReport> {
    if pred.size() != gt.size() || pred.size() != mask.size() {
        return Err(Error::Shape("reenactor loss: image and mask sizes differ".into()));
    }
    let s = mask.size();
    let masks = Tensor::from_vec([1, 1, s, s], mask.to_mask_values());
    Ok(reenactor_objective(
        &pred.to_tensor(),
        &gt.to_tensor(),
        &masks,
        Some(fake_logit_map),
        &weights.reenactor,
    )?
    .report)
}
