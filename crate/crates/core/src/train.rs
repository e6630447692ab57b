//! Training loops for both stages, with alternating discriminator and
//! generator updates, JSON-lines logging, checkpoints and a divergence guard.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{epoch_batches, DatasetCache};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{LandmarkDiscriminator, PredictorArch, PredictorModel, PredictorTape};
use crate::nn::{Adam, AdamConfig, Backprop, Init, Tensor};
use crate::objectives::{
    gan_d_loss_grad, predictor_objective, reenactor_objective, LossReport, LossTerm, LossWeights,
    PredictorWeights, ReenactorWeights,
};
use crate::reenact::{FaceImage, PatchDiscriminator, ReenactorArch, ReenactorModel, ReenactorTape};
use crate::render::BinaryImage;

pub const PREDICTOR_KIND: &str = "predictor";
pub const REENACTOR_KIND: &str = "reenactor";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Save a checkpoint every this many epochs (when an output directory is set).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    /// Validation snapshot interval in epochs.
    #[serde(default)]
    pub eval_every: Option<usize>,
    /// PNG sample grid interval in epochs.
    #[serde(default)]
    pub sample_every: Option<usize>,
}

impl StageConfig {
    pub fn validate(&self, stage: &'static str) -> Result<()> {
        let a = self.adam;
        if self.batch_size == 0 {
            return Err(Error::config(stage, "batch size must be positive"));
        }
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(Error::config(stage, "learning rate must be positive"));
        }
        if !(a.beta1 > 0.0 && a.beta1 < 1.0 && a.beta2 > 0.0 && a.beta2 < 1.0) {
            return Err(Error::config(stage, "betas must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub predictor: StageConfig,
    pub reenactor: StageConfig,
    #[serde(default)]
    pub weights: LossWeights,
    pub predictor_arch: PredictorArch,
    pub reenactor_arch: ReenactorArch,
    /// Fan-in scaled by default: the predictor is twelve layers deep and a
    /// fixed small spread leaves its signal vanishing for much of training.
    #[serde(default = "default_predictor_init")]
    pub predictor_init: Init,
    #[serde(default = "default_reenactor_init")]
    pub reenactor_init: Init,
    /// Train the landmark predictor against the landmark discriminator.
    #[serde(default = "default_true")]
    pub predictor_adversary: bool,
}

fn default_predictor_init() -> Init {
    Init::FanIn { gain: Init::leaky_gain() }
}

fn default_reenactor_init() -> Init {
    Init::DEFAULT
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    /// Full-scale settings: 1000/100 epochs, batches of 32/16, 256-pixel crops.
    pub fn full(seed: u64) -> Self {
        TrainConfig {
            seed,
            predictor: StageConfig {
                epochs: 1000,
                batch_size: 32,
                adam: AdamConfig::new(3e-4, 0.99, 0.999),
                checkpoint_every: Some(50),
                eval_every: Some(10),
                sample_every: Some(50),
            },
            reenactor: StageConfig {
                epochs: 100,
                batch_size: 16,
                adam: AdamConfig::new(2e-4, 0.5, 0.999),
                checkpoint_every: Some(10),
                eval_every: Some(5),
                sample_every: Some(5),
            },
            weights: LossWeights::default(),
            predictor_arch: PredictorArch::default(),
            reenactor_arch: ReenactorArch::for_resolution(256),
            predictor_init: default_predictor_init(),
            reenactor_init: default_reenactor_init(),
            predictor_adversary: true,
        }
    }

    /// Desk-scale settings: same optimizers, 200/50 epochs, 64-pixel toy networks.
    pub fn toy(seed: u64) -> Self {
        let mut c = Self::full(seed);
        c.predictor.epochs = 200;
        c.predictor.checkpoint_every = None;
        c.predictor.eval_every = Some(20);
        c.predictor.sample_every = None;
        c.reenactor.epochs = 50;
        c.reenactor.checkpoint_every = None;
        c.reenactor.eval_every = Some(10);
        c.reenactor.sample_every = Some(25);
        c.predictor_arch = PredictorArch::toy();
        c.reenactor_arch = ReenactorArch::toy();
        c
    }

    /// Seconds-scale networks for smoke tests and demos at any supported resolution.
    pub fn tiny(seed: u64, resolution: usize, epochs: usize) -> Self {
        let mut c = Self::toy(seed);
        for stage in [&mut c.predictor, &mut c.reenactor] {
            stage.epochs = epochs;
            stage.batch_size = 8;
            stage.eval_every = Some(1);
            stage.sample_every = None;
        }
        c.predictor_arch = PredictorArch {
            step_channels: vec![4, 4],
            time_channels: 4,
            time_layers: 2,
            audio_features: 16,
            pose_widths: vec![8, 8],
            blink_widths: vec![8],
            fusion_hidden: 16,
            resolution,
            discriminator_widths: vec![16, 8],
            ..PredictorArch::toy()
        };
        c.reenactor_arch = ReenactorArch {
            base_channels: 4,
            max_channels: 8,
            disc_base_channels: 4,
            disc_strided_layers: 2,
            ..ReenactorArch::for_resolution(resolution)
        };
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.predictor.validate("predictor training")?;
        self.reenactor.validate("reenactor training")?;
        self.weights.validate()?;
        self.predictor_arch.validate()?;
        self.reenactor_arch.validate()?;
        for init in [self.predictor_init, self.reenactor_init] {
            let ok = match init {
                Init::Normal { std } => std > 0.0 && std.is_finite(),
                Init::FanIn { gain } => gain > 0.0 && gain.is_finite(),
                Init::Zeros => true,
            };
            if !ok {
                return Err(Error::config("training", "initialization scale must be positive"));
            }
        }
        Ok(())
    }
}

/// Seed for one (stage, identity) stream, derived from the run seed.
pub fn stream_seed(seed: u64, stage: &str, identity: &str) -> u64 {
    // FNV-1a over the tags, mixed with the run seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes().chain([0u8]).chain(identity.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Per-epoch means of the step reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub generator: LossReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<f64>,
    /// Validation metric snapshot: landmark error in pixels for the predictor,
    /// masked L1 for the reenactor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub wall_seconds: f64,
}

impl TrainHistory {
    /// Loss trajectory without timing, for reproducibility comparisons.
    pub fn trajectory(&self) -> &[EpochRecord] {
        &self.epochs
    }

    pub fn last_validation(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|e| e.validation)
    }
}

/// One step's losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub generator: LossReport,
    pub discriminator: Option<f64>,
}

#[derive(Default)]
struct EpochAccumulator {
    names: Vec<(String, f64)>,
    sums: Vec<f64>,
    d_sum: f64,
    has_d: bool,
    count: usize,
}

impl EpochAccumulator {
    fn add(&mut self, r: &StepReport, n: usize) {
        if self.names.is_empty() {
            self.names = r.generator.terms.iter().map(|t| (t.name.clone(), t.weight)).collect();
            self.sums = vec![0.0; self.names.len()];
        }
        for (s, t) in self.sums.iter_mut().zip(&r.generator.terms) {
            *s += t.value * n as f64;
        }
        if let Some(d) = r.discriminator {
            self.d_sum += d * n as f64;
            self.has_d = true;
        }
        self.count += n;
    }

    fn finish(self, epoch: usize, validation: Option<f64>) -> Result<EpochRecord> {
        let k = self.count.max(1) as f64;
        let terms = self
            .names
            .into_iter()
            .zip(self.sums)
            .map(|((name, weight), s)| LossTerm { name, weight, value: s / k })
            .collect();
        Ok(EpochRecord {
            epoch,
            generator: LossReport::new(terms)?,
            discriminator: self.has_d.then(|| self.d_sum / k),
            validation,
        })
    }
}

/// Where a training run writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    log: Option<std::sync::Arc<std::sync::Mutex<BufWriter<File>>>>,
}

impl RunOutput {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let f = File::options().create(true).append(true).open(dir.join("train_log.jsonl"))?;
        Ok(RunOutput {
            dir: dir.to_path_buf(),
            log: Some(std::sync::Arc::new(std::sync::Mutex::new(BufWriter::new(f)))),
        })
    }

    fn log(&self, value: serde_json::Value) -> Result<()> {
        if let Some(log) = &self.log {
            let mut w = log.lock().expect("log lock");
            serde_json::to_writer(&mut *w, &value)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn flush(&self) -> Result<()> {
        if let Some(log) = &self.log {
            log.lock().expect("log lock").flush()?;
        }
        Ok(())
    }
}

/// Turns a non-finite step (reported or raised) into [`Error::Diverged`].
fn guard_step(result: Result<StepReport>, epoch: usize, step: usize) -> Result<StepReport> {
    let diverged = |detail: String| Error::Diverged { epoch, step, detail };
    match result {
        Ok(r) => {
            let d_ok = r.discriminator.map_or(true, f64::is_finite);
            if r.generator.check().is_err() || !d_ok {
                return Err(diverged(format!("non-finite loss: {r:?}")));
            }
            Ok(r)
        }
        Err(Error::NonFinite(what)) => Err(diverged(format!("non-finite {what}"))),
        Err(e) => Err(e),
    }
}

fn stored_adam(c: &Checkpoint) -> Result<AdamConfig> {
    let v = c
        .header
        .meta
        .get("adam")
        .ok_or_else(|| Error::Format("checkpoint lacks optimizer settings".into()))?;
    Ok(serde_json::from_value(v.clone())?)
}

/// Landmark predictor plus its discriminator and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorTrainer {
    pub identity: String,
    pub model: PredictorModel,
    pub disc: LandmarkDiscriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub epoch: usize,
}

impl PredictorTrainer {
    pub fn new(cfg: &TrainConfig, identity: &str) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, PREDICTOR_KIND, identity));
        let model = PredictorModel::new(cfg.predictor_arch.clone(), cfg.predictor_init, &mut rng)?;
        let disc = LandmarkDiscriminator::new(&cfg.predictor_arch, cfg.predictor_init, &mut rng);
        let opt_g = Adam::new(cfg.predictor.adam, &model.params());
        let opt_d = Adam::new(cfg.predictor.adam, &disc.params());
        Ok(PredictorTrainer {
            identity: identity.to_string(),
            model,
            disc,
            opt_g,
            opt_d,
            epoch: 0,
        })
    }

    /// Sets the output offset to the mean training landmarks and the
    /// condition centre to the mean training pose and blink.
    pub fn fit_offsets(&mut self, train: &DatasetCache) {
        let n2 = 2 * self.model.arch.landmarks;
        let mut mean = vec![0.0; n2];
        let mut cond = [0.0; 5];
        for s in &train.samples {
            for (m, v) in mean.iter_mut().zip(s.landmarks.flat()) {
                *m += v;
            }
            let (p, b) = (s.pose.to_array(), s.blink.to_array());
            for (m, v) in cond.iter_mut().zip(p.iter().chain(&b)) {
                *m += v;
            }
        }
        let k = train.len().max(1) as f64;
        self.model.template = mean.into_iter().map(|v| v / k).collect();
        self.model.condition_mean = cond.map(|v| v / k);
    }

    /// Accumulates discriminator gradients of the GAN loss on real vs detached fake
    /// landmarks (normalized units) and returns the loss.
    pub fn discriminator_backward(&mut self, real: &Tensor, fake: &Tensor) -> Result<f64> {
        self.disc.zero_grad();
        let (lr, tr) = self.disc.forward_train(&self.disc.to_pixels(real))?;
        let (lf, tf) = self.disc.forward_train(&self.disc.to_pixels(fake))?;
        let (dl, gr, gf) = gan_d_loss_grad(&lr, &lf)?;
        self.disc.backward(&tr, &gr, Backprop::PARAMS_ONLY);
        self.disc.backward(&tf, &gf, Backprop::PARAMS_ONLY);
        Ok(dl)
    }

    /// Accumulates predictor gradients of the generator objective for an
    /// already computed forward pass. The adversarial term (if any) goes
    /// through the current discriminator without touching its gradients.
    pub fn generator_backward(
        &mut self,
        fake: &Tensor,
        tape: &PredictorTape,
        gt: &Tensor,
        weights: &PredictorWeights,
        adversarial: bool,
    ) -> Result<LossReport> {
        let res = self.model.arch.resolution;
        let adv = if adversarial {
            Some(self.disc.forward_train(&self.disc.to_pixels(fake))?)
        } else {
            None
        };
        let w = if adversarial {
            *weights
        } else {
            PredictorWeights {
                adversarial: 0.0,
                ..*weights
            }
        };
        let obj = predictor_objective(fake, gt, adv.as_ref().map(|a| &a.0), res, &w)?;
        let mut d_pred = obj.d_pred;
        if let (Some(dz), Some((_, tg))) = (&obj.d_fake_logits, &adv) {
            let mut d_px = self
                .disc
                .backward(tg, dz, Backprop::INPUT_ONLY)
                .expect("input gradient requested");
            d_px.scale(res as f64);
            d_pred.add_assign(&d_px);
        }
        self.model.zero_grad();
        self.model.backward(tape, &d_pred);
        Ok(obj.report)
    }

    /// One discriminator update (if adversarial) followed by one generator update.
    pub fn train_step(
        &mut self,
        data: &DatasetCache,
        batch: &[usize],
        adversarial: bool,
        weights: &LossWeights,
    ) -> Result<StepReport> {
        let input = data.predictor_input(batch);
        let gt = data.landmark_targets(batch);
        let (fake, tape) = self.model.forward_train(&input)?;
        let mut d_loss = None;
        if adversarial {
            d_loss = Some(self.discriminator_backward(&gt, &fake)?);
            self.opt_d.update(self.disc.params_mut());
        }
        let report = self.generator_backward(&fake, &tape, &gt, &weights.predictor, adversarial)?;
        self.opt_g.update(self.model.params_mut());
        Ok(StepReport {
            generator: report,
            discriminator: d_loss,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(PREDICTOR_KIND, &self.model.arch, self.epoch)?;
        c.header.identity = Some(self.identity.clone());
        c.push_params("g", self.model.named_params());
        c.push("g.template", &[self.model.template.len()], &self.model.template);
        c.push("g.condition_mean", &[5], &self.model.condition_mean);
        c.push_params("d", self.disc.named_params());
        c.push_adam("opt_g", &self.opt_g);
        c.push_adam("opt_d", &self.opt_d);
        c.header.meta = serde_json::json!({ "adam": self.opt_g.config });
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(PREDICTOR_KIND)?;
        let adam = stored_adam(c)?;
        let arch: PredictorArch = c.arch()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = PredictorModel::new(arch.clone(), Init::Zeros, &mut rng)?;
        let mut disc = LandmarkDiscriminator::new(&arch, Init::Zeros, &mut rng);
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        c.load_params("g", names, model.params_mut())?;
        c.read_into("g.template", &mut model.template)?;
        c.read_into("g.condition_mean", &mut model.condition_mean)?;
        let names: Vec<String> = disc.named_params().into_iter().map(|(n, _)| n).collect();
        c.load_params("d", names, disc.params_mut())?;
        let mut opt_g = Adam::new(adam, &model.params());
        let mut opt_d = Adam::new(adam, &disc.params());
        c.load_adam("opt_g", &mut opt_g)?;
        c.load_adam("opt_d", &mut opt_d)?;
        Ok(PredictorTrainer {
            identity: c.header.identity.clone().unwrap_or_default(),
            model,
            disc,
            opt_g,
            opt_d,
            epoch: c.header.epoch,
        })
    }
}

/// Mean landmark error in pixels of the predictor over a cache.
pub fn predictor_ale(model: &PredictorModel, data: &DatasetCache) -> Result<f64> {
    let chunks: Vec<Vec<usize>> = (0..data.len()).collect::<Vec<_>>().chunks(64).map(<[usize]>::to_vec).collect();
    let mut errs = Vec::with_capacity(data.len());
    for b in chunks {
        let out = model.predict_batch(&data.predictor_input(&b))?;
        let gt = data.landmark_targets(&b);
        for i in 0..b.len() {
            let d: Vec<f64> = out.sample(i).iter().zip(gt.sample(i)).map(|(a, g)| (a - g).abs()).collect();
            errs.push(exec::pairwise_sum(&d) / d.len() as f64 * model.arch.resolution as f64);
        }
    }
    Ok(exec::pairwise_sum(&errs) / errs.len().max(1) as f64)
}

/// Trains the landmark predictor of one identity.
pub fn train_predictor(
    cfg: &TrainConfig,
    train: &DatasetCache,
    val: Option<&DatasetCache>,
    identity: &str,
    with_adversary: bool,
    out: Option<&RunOutput>,
) -> Result<(PredictorTrainer, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let mut t = PredictorTrainer::new(cfg, identity)?;
    t.fit_offsets(train);
    let history = continue_predictor(cfg, &mut t, train, val, with_adversary, out)?;
    Ok((t, history))
}

/// Runs the remaining epochs of a predictor run.
pub fn continue_predictor(
    cfg: &TrainConfig,
    t: &mut PredictorTrainer,
    train: &DatasetCache,
    val: Option<&DatasetCache>,
    with_adversary: bool,
    out: Option<&RunOutput>,
) -> Result<TrainHistory> {
    let start = Instant::now();
    let sc = cfg.predictor;
    let mut history = TrainHistory::default();
    let seed = stream_seed(cfg.seed, "predictor-batches", &t.identity);
    while t.epoch < sc.epochs {
        let epoch = t.epoch;
        let mut acc = EpochAccumulator::default();
        for (step, batch) in epoch_batches(train.len(), sc.batch_size, seed, epoch).iter().enumerate() {
            let r = match guard_step(t.train_step(train, batch, with_adversary, &cfg.weights), epoch, step) {
                Ok(r) => r,
                Err(e) => {
                    if let (Some(o), Error::Diverged { .. }) = (out, &e) {
                        o.log(serde_json::json!({
                            "stage": PREDICTOR_KIND, "identity": t.identity, "epoch": epoch, "step": step,
                            "error": e.to_string(),
                        }))?;
                        t.to_checkpoint()?.save(&o.dir.join(format!("{}_predictor_diverged.ckpt", t.identity)))?;
                    }
                    if let Some(o) = out {
                        o.flush()?;
                    }
                    return Err(e);
                }
            };
            if let Some(o) = out {
                o.log(serde_json::json!({
                    "stage": PREDICTOR_KIND, "identity": t.identity, "epoch": epoch, "step": step,
                    "generator": r.generator, "discriminator": r.discriminator,
                }))?;
            }
            acc.add(&r, batch.len());
        }
        t.epoch += 1;
        let snapshot = match (val, sc.eval_every) {
            (Some(v), Some(k)) if k > 0 && (t.epoch % k == 0 || t.epoch == sc.epochs) => {
                Some(predictor_ale(&t.model, v)?)
            }
            _ => None,
        };
        let rec = acc.finish(epoch, snapshot)?;
        tracing::debug!(identity = %t.identity, epoch, total = rec.generator.total, "predictor epoch");
        history.epochs.push(rec);
        if let (Some(o), Some(k)) = (out, sc.checkpoint_every) {
            if k > 0 && t.epoch % k == 0 {
                t.to_checkpoint()?.save(&o.dir.join(format!("{}_predictor.ckpt", t.identity)))?;
            }
        }
    }
    if let Some(o) = out {
        o.flush()?;
    }
    history.wall_seconds = start.elapsed().as_secs_f64();
    Ok(history)
}

/// Reenactor generator plus patch discriminator and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ReenactorTrainer {
    pub identity: String,
    pub model: ReenactorModel,
    pub disc: PatchDiscriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub epoch: usize,
}

impl ReenactorTrainer {
    pub fn new(cfg: &TrainConfig, identity: &str) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, REENACTOR_KIND, identity));
        let model = ReenactorModel::new(cfg.reenactor_arch.clone(), cfg.reenactor_init, &mut rng)?;
        let disc = PatchDiscriminator::new(&cfg.reenactor_arch, cfg.reenactor_init, &mut rng)?;
        let opt_g = Adam::new(cfg.reenactor.adam, &model.params());
        let opt_d = Adam::new(cfg.reenactor.adam, &disc.params());
        Ok(ReenactorTrainer {
            identity: identity.to_string(),
            model,
            disc,
            opt_g,
            opt_d,
            epoch: 0,
        })
    }

    /// Accumulates patch discriminator gradients on real vs detached fake faces.
    pub fn discriminator_backward(&mut self, x: &Tensor, real: &Tensor, fake: &Tensor) -> Result<f64> {
        self.disc.zero_grad();
        let (lr, tr) = self.disc.forward_train(x, real)?;
        let (lf, tf) = self.disc.forward_train(x, fake)?;
        let (dl, gr, gf) = gan_d_loss_grad(&lr, &lf)?;
        self.disc.backward(&tr, &gr, Backprop::PARAMS_ONLY);
        self.disc.backward(&tf, &gf, Backprop::PARAMS_ONLY);
        Ok(dl)
    }

    /// Accumulates generator gradients of the reenactor objective for an
    /// already computed forward pass.
    pub fn generator_backward(
        &mut self,
        x: &Tensor,
        fake: &Tensor,
        tape: &ReenactorTape,
        real: &Tensor,
        masks: &Tensor,
        weights: &ReenactorWeights,
    ) -> Result<LossReport> {
        let (lg, tg) = self.disc.forward_train(x, fake)?;
        let obj = reenactor_objective(fake, real, masks, Some(&lg), weights)?;
        let mut d_fake = obj.d_pred;
        if let Some(dz) = &obj.d_fake_logits {
            let d_img = self
                .disc
                .backward(&tg, dz, Backprop::INPUT_ONLY)
                .expect("input gradient requested");
            d_fake.add_assign(&d_img);
        }
        self.model.zero_grad();
        self.model.backward(tape, &d_fake);
        Ok(obj.report)
    }

    pub fn train_step(&mut self, data: &DatasetCache, batch: &[usize], weights: &LossWeights) -> Result<StepReport> {
        let x = data.landmark_images(batch);
        let real = data.faces(batch);
        let masks = data.masks(batch);
        let (fake, tape) = self.model.forward_train(&x)?;
        let d_loss = self.discriminator_backward(&x, &real, &fake)?;
        self.opt_d.update(self.disc.params_mut());
        let report = self.generator_backward(&x, &fake, &tape, &real, &masks, &weights.reenactor)?;
        self.opt_g.update(self.model.params_mut());
        Ok(StepReport {
            generator: report,
            discriminator: Some(d_loss),
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(REENACTOR_KIND, &self.model.arch, self.epoch)?;
        c.header.identity = Some(self.identity.clone());
        let mut m = self.model.clone();
        let mut d = self.disc.clone();
        c.push_params("g", self.model.named_params());
        c.push_norms("g", m.norms_mut());
        c.push_params("d", self.disc.named_params());
        c.push_norms("d", d.norms_mut());
        c.push_adam("opt_g", &self.opt_g);
        c.push_adam("opt_d", &self.opt_d);
        c.header.meta = serde_json::json!({ "adam": self.opt_g.config });
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(REENACTOR_KIND)?;
        let adam = stored_adam(c)?;
        let arch: ReenactorArch = c.arch()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = ReenactorModel::new(arch.clone(), Init::Zeros, &mut rng)?;
        let mut disc = PatchDiscriminator::new(&arch, Init::Zeros, &mut rng)?;
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        c.load_params("g", names, model.params_mut())?;
        c.load_norms("g", model.norms_mut())?;
        let names: Vec<String> = disc.named_params().into_iter().map(|(n, _)| n).collect();
        c.load_params("d", names, disc.params_mut())?;
        c.load_norms("d", disc.norms_mut())?;
        let mut opt_g = Adam::new(adam, &model.params());
        let mut opt_d = Adam::new(adam, &disc.params());
        c.load_adam("opt_g", &mut opt_g)?;
        c.load_adam("opt_d", &mut opt_d)?;
        Ok(ReenactorTrainer {
            identity: c.header.identity.clone().unwrap_or_default(),
            model,
            disc,
            opt_g,
            opt_d,
            epoch: c.header.epoch,
        })
    }
}

/// Mean per-sample masked L1 of reenacted ground-truth landmark images.
pub fn reenactor_masked_l1(model: &ReenactorModel, data: &DatasetCache) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut vals = Vec::with_capacity(data.len());
    for b in idx.chunks(16) {
        let out = model.forward(&data.landmark_images(b))?;
        let r = model.arch.resolution;
        for (k, &i) in b.iter().enumerate() {
            let face = FaceImage::new(r, out.sample(k).to_vec())?;
            let s = &data.samples[i];
            vals.push(crate::objectives::masked_l1_loss(&face, &s.face, &s.mask)?);
        }
    }
    Ok(exec::pairwise_sum(&vals) / vals.len().max(1) as f64)
}

pub fn train_reenactor(
    cfg: &TrainConfig,
    train: &DatasetCache,
    val: Option<&DatasetCache>,
    identity: &str,
    out: Option<&RunOutput>,
) -> Result<(ReenactorTrainer, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let mut t = ReenactorTrainer::new(cfg, identity)?;
    let history = continue_reenactor(cfg, &mut t, train, val, out)?;
    Ok((t, history))
}

pub fn continue_reenactor(
    cfg: &TrainConfig,
    t: &mut ReenactorTrainer,
    train: &DatasetCache,
    val: Option<&DatasetCache>,
    out: Option<&RunOutput>,
) -> Result<TrainHistory> {
    let start = Instant::now();
    let sc = cfg.reenactor;
    let mut history = TrainHistory::default();
    let seed = stream_seed(cfg.seed, "reenactor-batches", &t.identity);
    while t.epoch < sc.epochs {
        let epoch = t.epoch;
        let mut acc = EpochAccumulator::default();
        for (step, batch) in epoch_batches(train.len(), sc.batch_size, seed, epoch).iter().enumerate() {
            let r = match guard_step(t.train_step(train, batch, &cfg.weights), epoch, step) {
                Ok(r) => r,
                Err(e) => {
                    if let (Some(o), Error::Diverged { .. }) = (out, &e) {
                        o.log(serde_json::json!({
                            "stage": REENACTOR_KIND, "identity": t.identity, "epoch": epoch, "step": step,
                            "error": e.to_string(),
                        }))?;
                        t.to_checkpoint()?.save(&o.dir.join(format!("{}_reenactor_diverged.ckpt", t.identity)))?;
                    }
                    if let Some(o) = out {
                        o.flush()?;
                    }
                    return Err(e);
                }
            };
            if let Some(o) = out {
                o.log(serde_json::json!({
                    "stage": REENACTOR_KIND, "identity": t.identity, "epoch": epoch, "step": step,
                    "generator": r.generator, "discriminator": r.discriminator,
                }))?;
            }
            acc.add(&r, batch.len());
        }
        t.epoch += 1;
        let snapshot = match (val, sc.eval_every) {
            (Some(v), Some(k)) if k > 0 && (t.epoch % k == 0 || t.epoch == sc.epochs) => {
                Some(reenactor_masked_l1(&t.model, v)?)
            }
            _ => None,
        };
        let rec = acc.finish(epoch, snapshot)?;
        tracing::debug!(identity = %t.identity, epoch, total = rec.generator.total, "reenactor epoch");
        history.epochs.push(rec);
        if let Some(o) = out {
            if let Some(k) = sc.checkpoint_every {
                if k > 0 && t.epoch % k == 0 {
                    t.to_checkpoint()?.save(&o.dir.join(format!("{}_reenactor.ckpt", t.identity)))?;
                }
            }
            if let (Some(k), Some(v)) = (sc.sample_every, val) {
                if k > 0 && t.epoch % k == 0 {
                    let path = o.dir.join(format!("{}_samples_epoch{:03}.png", t.identity, t.epoch));
                    save_sample_grid(&t.model, v, 4, &path)?;
                }
            }
        }
    }
    if let Some(o) = out {
        o.flush()?;
    }
    history.wall_seconds = start.elapsed().as_secs_f64();
    Ok(history)
}

fn gray_to_rgb(img: &BinaryImage) -> image::RgbImage {
    image::RgbImage::from_fn(img.size() as u32, img.size() as u32, |x, y| {
        let v = if img.get(x as usize, y as usize) { 255 } else { 0 };
        image::Rgb([v, v, v])
    })
}

/// Rows of (landmark image | generated face | ground truth) for the first `rows` samples.
pub fn save_sample_grid(model: &ReenactorModel, data: &DatasetCache, rows: usize, path: &Path) -> Result<()> {
    let rows = rows.min(data.len());
    let r = model.arch.resolution as u32;
    let mut grid = image::RgbImage::new(3 * r, rows.max(1) as u32 * r);
    for i in 0..rows {
        let s = &data.samples[i];
        let gen = model.reenact(&s.landmark_image)?;
        for (col, tile) in [gray_to_rgb(&s.landmark_image), gen.to_rgb8(), s.face.to_rgb8()]
            .into_iter()
            .enumerate()
        {
            image::imageops::replace(&mut grid, &tile, (col as u32 * r) as i64, (i as u32 * r) as i64);
        }
    }
    grid.save(path)?;
    Ok(())
}

/// Mean-landmark baseline: pixel error of always predicting the training mean.
pub fn mean_landmark_baseline(train: &DatasetCache, eval: &DatasetCache, resolution: usize) -> f64 {
    let n2 = train.samples.first().map_or(0, |s| 2 * s.landmarks.len());
    let mut mean = vec![0.0; n2];
    for s in &train.samples {
        for (m, v) in mean.iter_mut().zip(s.landmarks.flat()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len().max(1) as f64);
    let errs: Vec<f64> = eval
        .samples
        .iter()
        .map(|s| {
            let d: Vec<f64> = s.landmarks.flat().iter().zip(&mean).map(|(a, b)| (a - b).abs()).collect();
            exec::pairwise_sum(&d) / d.len() as f64 * resolution as f64
        })
        .collect();
    exec::pairwise_sum(&errs) / errs.len().max(1) as f64
}

/// Mean-image baseline: masked L1 of the mean training face against each evaluation face.
pub fn mean_image_baseline(train: &DatasetCache, eval: &DatasetCache) -> Result<f64> {
    let r = train.resolution;
    let mut mean = vec![0.0; 3 * r * r];
    for s in &train.samples {
        for (m, v) in mean.iter_mut().zip(s.face.pixels()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len().max(1) as f64);
    let mean = FaceImage::new(r, mean)?;
    let vals = eval
        .samples
        .iter()
        .map(|s| crate::objectives::masked_l1_loss(&mean, &s.face, &s.mask))
        .collect::<Result<Vec<_>>>()?;
    Ok(exec::pairwise_sum(&vals) / vals.len().max(1) as f64)
}
