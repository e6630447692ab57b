//! Training loops: initialization, determinism, persistence and the divergence guard.

use std::path::Path;

use apbface_core::checkpoint::Checkpoint;
use apbface_core::data::{synth_dataset, DatasetCache, DatasetManifest, Split, SynthConfig};
use apbface_core::exec::{with_mode, ExecMode};
use apbface_core::nn::{AdamConfig, Param};
use apbface_core::train::{
    continue_predictor, continue_reenactor, train_predictor, train_reenactor, PredictorTrainer, ReenactorTrainer,
    RunOutput, TrainConfig, TrainHistory,
};
use apbface_core::Error;

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: DatasetManifest,
    train: DatasetCache,
    val: DatasetCache,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_samples: 48,
        n_identities: 1,
        resolution: 16,
        ..SynthConfig::toy(5)
    };
    let manifest = synth_dataset(&cfg, dir.path()).unwrap();
    let load = |s| DatasetCache::load(&manifest, dir.path(), &manifest.indices(s, None)).unwrap();
    let (train, val) = (load(Split::Train), load(Split::Val));
    Fixture {
        _dir: dir,
        manifest,
        train,
        val,
    }
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig::tiny(3, 16, epochs)
}

fn values(params: Vec<&Param>) -> Vec<u64> {
    params.iter().flat_map(|p| p.value.iter().map(|v| v.to_bits())).collect()
}

fn trajectory_bits(h: &TrainHistory) -> Vec<u64> {
    h.trajectory()
        .iter()
        .flat_map(|r| {
            let mut v: Vec<u64> = r.generator.terms.iter().map(|t| t.value.to_bits()).collect();
            v.push(r.generator.total.to_bits());
            v.extend(r.discriminator.map(f64::to_bits));
            v.extend(r.validation.map(f64::to_bits));
            v
        })
        .collect()
}

#[test]
fn zero_epochs_return_the_initialization() {
    let f = fixture();
    let cfg = small_config(0);
    let (t, h) = train_predictor(&cfg, &f.train, Some(&f.val), "id0", true, None).unwrap();
    assert!(h.epochs.is_empty());
    let mut fresh = PredictorTrainer::new(&cfg, "id0").unwrap();
    fresh.fit_offsets(&f.train);
    assert_eq!(t, fresh);
    assert_eq!(t.to_checkpoint().unwrap().header.epoch, 0);

    let (t, h) = train_reenactor(&cfg, &f.train, Some(&f.val), "id0", None).unwrap();
    assert!(h.epochs.is_empty());
    assert_eq!(t, ReenactorTrainer::new(&cfg, "id0").unwrap());
}

#[test]
fn offsets_are_the_training_means() {
    let f = fixture();
    let mut t = PredictorTrainer::new(&small_config(1), "id0").unwrap();
    t.fit_offsets(&f.train);
    let k = f.train.len() as f64;
    let mean = |g: &dyn Fn(&apbface_core::data::SampleData) -> f64| f.train.samples.iter().map(g).sum::<f64>() / k;
    let want = [
        mean(&|s| s.pose.yaw),
        mean(&|s| s.pose.pitch),
        mean(&|s| s.pose.roll),
        mean(&|s| s.blink.left),
        mean(&|s| s.blink.right),
    ];
    for (got, want) in t.model.condition_mean.iter().zip(want) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert!((t.model.template[1] - mean(&|s| s.landmarks.points[0][1])).abs() < 1e-12);

    // Centring only moves where the condition branches see the origin.
    let s = &f.train.samples[0];
    let before = t.model.encode_branches(&s.mfcc, s.pose, s.blink).unwrap();
    let shift = t.model.condition_mean;
    t.model.condition_mean = [0.0; 5];
    let p = apbface_core::geometry::PoseTriple {
        yaw: s.pose.yaw - shift[0],
        pitch: s.pose.pitch - shift[1],
        roll: s.pose.roll - shift[2],
    };
    let b = apbface_core::geometry::BlinkPair::new(s.blink.left - shift[3], s.blink.right - shift[4]);
    assert_eq!(t.model.encode_branches(&s.mfcc, p, b).unwrap(), before);
}

#[test]
fn single_threaded_training_is_bit_reproducible() {
    let f = fixture();
    let cfg = small_config(3);
    let run = || {
        with_mode(ExecMode::Sequential, || {
            let (p, hp) = train_predictor(&cfg, &f.train, Some(&f.val), "id0", true, None).unwrap();
            let (r, hr) = train_reenactor(&cfg, &f.train, Some(&f.val), "id0", None).unwrap();
            (p, hp, r, hr)
        })
    };
    let (p1, hp1, r1, hr1) = run();
    let (p2, hp2, r2, hr2) = run();
    assert_eq!(hp1.epochs.len(), 3);
    assert_eq!(trajectory_bits(&hp1), trajectory_bits(&hp2));
    assert_eq!(trajectory_bits(&hr1), trajectory_bits(&hr2));
    assert_eq!(values(p1.model.params()), values(p2.model.params()));
    assert_eq!(values(r1.model.params()), values(r2.model.params()));

    // the parallel kernels reduce in the same order
    let (p3, hp3) = with_mode(ExecMode::Parallel, || {
        train_predictor(&cfg, &f.train, Some(&f.val), "id0", true, None).unwrap()
    });
    assert_eq!(trajectory_bits(&hp1), trajectory_bits(&hp3));
    assert_eq!(values(p1.model.params()), values(p3.model.params()));
}

#[test]
fn every_epoch_report_recomposes() {
    let f = fixture();
    let cfg = small_config(2);
    let (_, hp) = train_predictor(&cfg, &f.train, Some(&f.val), "id0", true, None).unwrap();
    let (_, hr) = train_reenactor(&cfg, &f.train, Some(&f.val), "id0", None).unwrap();
    for r in hp.trajectory().iter().chain(hr.trajectory()) {
        r.generator.check().unwrap();
        assert!(r.discriminator.unwrap().is_finite());
        assert!(r.validation.unwrap().is_finite());
    }
    assert_eq!(hp.trajectory().iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![0, 1]);
    let names: Vec<&str> = hr.trajectory()[0].generator.terms.iter().map(|t| t.name.as_str()).collect();
    assert_eq!(names, ["l1", "masked_l1", "adversarial"]);
}

#[test]
fn l1_only_arm_has_no_discriminator_term() {
    let f = fixture();
    let (_, h) = train_predictor(&small_config(1), &f.train, None, "id0", false, None).unwrap();
    let r = &h.trajectory()[0];
    assert!(r.discriminator.is_none());
    assert_eq!(r.generator.terms.len(), 1);
    assert!(r.validation.is_none());
}

fn roundtrip(c: &Checkpoint, dir: &Path, name: &str) -> Checkpoint {
    let path = dir.join(name);
    c.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes().unwrap(), c.to_bytes().unwrap());
    loaded
}

#[test]
fn checkpoint_roundtrip_then_step_matches_uninterrupted_step() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(2);
    let (mut p, _) = train_predictor(&cfg, &f.train, None, "id0", true, None).unwrap();
    let mut p2 = PredictorTrainer::from_checkpoint(&roundtrip(&p.to_checkpoint().unwrap(), dir.path(), "p.ckpt")).unwrap();
    assert_eq!(p.to_checkpoint().unwrap().to_bytes().unwrap(), p2.to_checkpoint().unwrap().to_bytes().unwrap());
    let batch: Vec<usize> = (0..8).collect();
    let a = p.train_step(&f.train, &batch, true, &cfg.weights).unwrap();
    let b = p2.train_step(&f.train, &batch, true, &cfg.weights).unwrap();
    assert_eq!(a.generator, b.generator);
    assert_eq!(values(p.model.params()), values(p2.model.params()));
    assert_eq!(values(p.disc.params()), values(p2.disc.params()));

    let (mut r, _) = train_reenactor(&cfg, &f.train, None, "id0", None).unwrap();
    let mut r2 = ReenactorTrainer::from_checkpoint(&roundtrip(&r.to_checkpoint().unwrap(), dir.path(), "r.ckpt")).unwrap();
    assert_eq!(r.to_checkpoint().unwrap().to_bytes().unwrap(), r2.to_checkpoint().unwrap().to_bytes().unwrap());
    let a = r.train_step(&f.train, &batch, &cfg.weights).unwrap();
    let b = r2.train_step(&f.train, &batch, &cfg.weights).unwrap();
    assert_eq!(a.generator, b.generator);
    assert_eq!(values(r.model.params()), values(r2.model.params()));
}

#[test]
fn resuming_from_a_checkpoint_continues_the_same_run() {
    let f = fixture();
    let full_cfg = small_config(3);
    let (full, h_full) = with_mode(ExecMode::Sequential, || {
        train_predictor(&full_cfg, &f.train, Some(&f.val), "id0", true, None).unwrap()
    });
    let (part, _) = with_mode(ExecMode::Sequential, || {
        train_predictor(&small_config(2), &f.train, Some(&f.val), "id0", true, None).unwrap()
    });
    let mut resumed = PredictorTrainer::from_checkpoint(&part.to_checkpoint().unwrap()).unwrap();
    let h_rest = with_mode(ExecMode::Sequential, || {
        continue_predictor(&full_cfg, &mut resumed, &f.train, Some(&f.val), true, None).unwrap()
    });
    assert_eq!(h_rest.epochs.len(), 1);
    assert_eq!(h_rest.epochs[0], h_full.epochs[2]);
    assert_eq!(resumed, full);

    let (rfull, _) = train_reenactor(&full_cfg, &f.train, None, "id0", None).unwrap();
    let (rpart, _) = train_reenactor(&small_config(2), &f.train, None, "id0", None).unwrap();
    let mut rres = ReenactorTrainer::from_checkpoint(&rpart.to_checkpoint().unwrap()).unwrap();
    continue_reenactor(&full_cfg, &mut rres, &f.train, None, None).unwrap();
    assert_eq!(values(rres.model.params()), values(rfull.model.params()));
}

#[test]
fn divergence_aborts_with_a_diagnostic_checkpoint() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = RunOutput::new(dir.path()).unwrap();
    let mut cfg = small_config(5);
    cfg.predictor.adam = AdamConfig::new(1e300, 0.99, 0.999);
    let err = train_predictor(&cfg, &f.train, None, "id0", true, Some(&out)).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
    assert!(dir.path().join("id0_predictor_diverged.ckpt").is_file());

    cfg.reenactor.adam = AdamConfig::new(1e300, 0.5, 0.999);
    let err = train_reenactor(&cfg, &f.train, None, "id0", Some(&out)).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
    assert!(dir.path().join("id0_reenactor_diverged.ckpt").is_file());
    assert!(std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap().lines().count() > 0);
}

#[test]
fn invalid_settings_are_rejected() {
    let f = fixture();
    for mutate in [
        (|c: &mut TrainConfig| c.predictor.adam.lr = 0.0) as fn(&mut TrainConfig),
        |c| c.predictor.adam.beta1 = 1.0,
        |c| c.reenactor.batch_size = 0,
        |c| c.weights.predictor.l1 = -1.0,
    ] {
        let mut cfg = small_config(1);
        mutate(&mut cfg);
        assert!(cfg.validate().is_err());
        assert!(train_predictor(&cfg, &f.train, None, "id0", true, None).is_err());
    }
    assert_eq!(f.manifest.samples.len(), 48);
}

#[test]
fn short_training_reduces_the_loss() {
    let f = fixture();
    let cfg = small_config(6);
    let (_, h) = train_predictor(&cfg, &f.train, Some(&f.val), "id0", false, None).unwrap();
    let t = h.trajectory();
    assert!(t.last().unwrap().generator.total < t[0].generator.total);
}

#[test]
fn full_settings_match_the_published_schedule() {
    let c = TrainConfig::full(0);
    assert_eq!((c.predictor.epochs, c.predictor.batch_size), (1000, 32));
    assert_eq!((c.predictor.adam.lr, c.predictor.adam.beta1, c.predictor.adam.beta2), (3e-4, 0.99, 0.999));
    assert_eq!((c.reenactor.epochs, c.reenactor.batch_size), (100, 16));
    assert_eq!((c.reenactor.adam.lr, c.reenactor.adam.beta1, c.reenactor.adam.beta2), (2e-4, 0.5, 0.999));
    assert_eq!((c.weights.predictor.l1, c.weights.predictor.adversarial), (100.0, 0.1));
    assert_eq!(
        (c.weights.reenactor.l1, c.weights.reenactor.mask, c.weights.reenactor.adversarial),
        (100.0, 100.0, 1.0)
    );
    let toy = TrainConfig::toy(7);
    assert_eq!((toy.predictor.epochs, toy.reenactor.epochs), (200, 50));
    let json = serde_json::to_string(&toy).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), toy);
}

mod pipeline {
    use super::*;
    use apbface_core::pipeline::{checkpoint_paths, evaluate_pipeline, run_pipeline, IdentityModels};

    #[test]
    fn reloaded_checkpoints_reproduce_the_report() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let synth = SynthConfig {
            n_samples: 80,
            resolution: 16,
            ..SynthConfig::toy(9)
        };
        let m = synth_dataset(&synth, &data).unwrap();
        let out = dir.path().join("run");
        let run = run_pipeline(&TrainConfig::tiny(1, 16, 2), &m, &data, Some(&out)).unwrap();
        assert_eq!(run.models.len(), 2);
        assert!(out.join("report.json").is_file());
        assert!(out.join("train_log.jsonl").is_file());
        let histories = run.report.histories.as_ref().unwrap();
        assert!(histories.iter().all(|h| h.predictor.epochs.len() == 2 && h.reenactor.epochs.len() == 2));

        let models: Vec<IdentityModels> = ["id0", "id1"]
            .iter()
            .map(|id| IdentityModels::load_dir(id, &out).unwrap())
            .collect();
        for (a, b) in models.iter().zip(&run.models) {
            assert_eq!(values(a.predictor.params()), values(b.predictor.params()));
            assert_eq!(values(a.reenactor.params()), values(b.reenactor.params()));
        }
        let mut again = evaluate_pipeline(&models, &m, &data, true).unwrap();
        again.histories = run.report.histories.clone();
        assert_eq!(serde_json::to_string(&again).unwrap(), serde_json::to_string(&run.report).unwrap());
        for r in &again.identities {
            assert!(r.cross_driven.is_some());
            assert!(r.generated.n_samples > 0);
        }
        let (p, _) = checkpoint_paths(&out, "id0");
        assert!(IdentityModels::load("id0", &p, &p).is_err());
    }

    #[test]
    fn resolution_mismatch_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig {
            n_samples: 20,
            resolution: 32,
            ..SynthConfig::toy(9)
        };
        let m = synth_dataset(&synth, dir.path()).unwrap();
        let err = run_pipeline(&TrainConfig::tiny(1, 16, 0), &m, dir.path(), None).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }
}
