//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any fails. Runs the full toy training once (several minutes).

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use apbface_core::audio::{extract_mfcc, AudioTrack, FeatureConfig};
use apbface_core::checkpoint::Checkpoint;
use apbface_core::data::{synth_dataset, DatasetCache, DatasetManifest, Split, SynthConfig};
use apbface_core::exec::{with_mode, ExecMode};
use apbface_core::geometry::{BlinkPair, IndexGroups, LandmarkDiscriminator, LandmarkSet, PredictorModel};
use apbface_core::gradcheck::run_all;
use apbface_core::metrics::{frechet_distance, ssim};
use apbface_core::nn::Tensor;
use apbface_core::objectives::{l1_loss, masked_l1_batch, masked_l1_loss};
use apbface_core::pipeline::{checkpoint_paths, evaluate_pipeline, split_cache, IdentityModels, PipelineReport};
use apbface_core::reenact::FaceImage;
use apbface_core::render::{face_mask, group_segments, rasterize, BinaryImage};
use apbface_core::train::{
    continue_predictor, predictor_ale, train_predictor, train_reenactor, PredictorTrainer, ReenactorTrainer,
    RunOutput, TrainConfig,
};
use apbface_service::{
    router, ErrorBody, MfccInput, ReenactRequest, ReenactResponse, Service, ServiceConfig, StatsReport,
    SweepRequest,
};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use http_body_util::BodyExt;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

const TOY_SEED: u64 = 7;
const IDS: [&str; 2] = ["id0", "id1"];

/// Outcome of one criterion: pass flag plus the measured numbers.
type Verdict = Result<(bool, String)>;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

// Gradient suite

fn gradients() -> Verdict {
    let start = Instant::now();
    let checks = run_all(TOY_SEED)?;
    let elapsed = start.elapsed();
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passes(1e-4)).map(|c| c.name.as_str()).collect();
    let pass = failed.is_empty() && checks.len() == 9 && elapsed < Duration::from_secs(120);
    Ok((
        pass,
        format!(
            "{} loss terms, worst relative error {worst:.2e} (< 1e-4), {:.1} s (< 120 s){}",
            checks.len(),
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", failing: {failed:?}") }
        ),
    ))
}

// Oracle equivalence

fn nested(f: &FaceImage) -> Vec<Vec<Vec<f64>>> {
    let n = f.size();
    (0..3).map(|c| (0..n).map(|y| (0..n).map(|x| f.get(c, x, y)).collect()).collect()).collect()
}

fn random_face(rng: &mut ChaCha8Rng, size: usize) -> FaceImage {
    FaceImage::new(size, (0..3 * size * size).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(TOY_SEED);

    let cfg = FeatureConfig::default();
    let track = AudioTrack::sine(440.0, 1.0, 0.0, cfg.window_len(), cfg.sample_rate);
    let got = extract_mfcc(&track, &cfg)?;
    let want = common::mfcc_reference(
        &track.samples,
        cfg.sample_rate as f64,
        cfg.n_fft_frames,
        cfg.hop(),
        cfg.n_mfcc,
        cfg.mel_bands,
        cfg.log_floor,
        cfg.pre_emphasis,
    );
    let mfcc_err = want
        .iter()
        .enumerate()
        .flat_map(|(t, row)| row.iter().enumerate().map(move |(c, w)| (t, c, *w)))
        .map(|(t, c, w)| (got.get(t, c) - w).abs())
        .fold(0.0, f64::max);

    let mut ssim_err: f64 = 0.0;
    for _ in 0..3 {
        let a = random_face(&mut rng, 16);
        let b = random_face(&mut rng, 16);
        ssim_err = ssim_err.max((ssim(&a, &b)? - common::ssim_reference(&nested(&a), &nested(&b))).abs());
    }

    let mut frechet_err: f64 = 0.0;
    for _ in 0..3 {
        let d = 4;
        let spd = |rng: &mut ChaCha8Rng| {
            let a: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            (0..d)
                .map(|i| (0..d).map(|j| (0..d).map(|k| a[i][k] * a[j][k]).sum::<f64>() + 0.1 * (i == j) as u8 as f64).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        let (c1, c2) = (spd(&mut rng), spd(&mut rng));
        let mu1: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mu2: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = |c: &Vec<Vec<f64>>| DMatrix::from_fn(d, d, |i, j| c[i][j]);
        let got = frechet_distance(&DVector::from_vec(mu1.clone()), &m(&c1), &DVector::from_vec(mu2.clone()), &m(&c2))?;
        frechet_err = frechet_err.max((got - common::frechet_reference(&mu1, &c1, &mu2, &c2)).abs());
    }

    let mut pixel_mismatches = 0usize;
    for trial in 0..4 {
        let spread = if trial % 2 == 0 { 0.3 } else { 0.6 };
        let points: Vec<[f64; 2]> = (0..20)
            .map(|_| [0.5 + rng.gen_range(-spread..spread), 0.5 + rng.gen_range(-spread..spread)])
            .collect();
        let l = LandmarkSet::new(points, IndexGroups::toy20())?;
        let segments: Vec<(usize, usize)> =
            l.groups.iter().iter().flat_map(|(_, idx, closed)| group_segments(idx, *closed)).collect();
        for size in [32, 64] {
            let img = rasterize(&l, size, 1.0)?;
            let want = common::raster_reference(&l.points, &segments, size, 1.0);
            let mask = face_mask(&l, size, 2)?;
            let want_mask = common::mask_reference(&l.points, size, 2);
            for y in 0..size {
                for x in 0..size {
                    pixel_mismatches += (img.get(x, y) != want[y * size + x]) as usize;
                    pixel_mismatches += (mask.get(x, y) != want_mask[y * size + x]) as usize;
                }
            }
        }
    }

    let (a, b) = (random_face(&mut rng, 16), random_face(&mut rng, 16));
    let full = BinaryImage::filled(16);
    let ta = Tensor::from_vec([2, 3, 8, 8], (0..384).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let tb = Tensor::from_vec([2, 3, 8, 8], (0..384).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let ones = Tensor::from_vec([2, 1, 8, 8], vec![1.0; 128]);
    let l1_exact = masked_l1_loss(&a, &b, &full)? == l1_loss(&a.to_tensor(), &b.to_tensor())?
        && masked_l1_batch(&ta, &tb, &ones)?.0 == l1_loss(&ta, &tb)?;

    let pass = mfcc_err <= 1e-6 && ssim_err <= 1e-9 && frechet_err <= 1e-6 && pixel_mismatches == 0 && l1_exact;
    Ok((
        pass,
        format!(
            "MFCC {mfcc_err:.1e} (≤ 1e-6), SSIM {ssim_err:.1e} (≤ 1e-9), Fréchet {frechet_err:.1e} (≤ 1e-6), \
             raster/mask mismatched pixels {pixel_mismatches} (0), masked L1 full mask ≡ L1 {l1_exact}"
        ),
    ))
}

// Toy end-to-end run

struct ToyRun {
    _dir: tempfile::TempDir,
    data: std::path::PathBuf,
    run: std::path::PathBuf,
    manifest: DatasetManifest,
    root: std::path::PathBuf,
    models: Vec<IdentityModels>,
    report: PipelineReport,
    /// Predictor after its first epoch, per identity.
    early: Vec<PredictorModel>,
    discriminators: Vec<LandmarkDiscriminator>,
    elapsed: Duration,
}

/// Same schedule as `run_pipeline`, with the predictor paused after epoch one
/// to keep an early snapshot.
fn toy_run() -> Result<ToyRun> {
    let start = Instant::now();
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    synth_dataset(&SynthConfig::toy(TOY_SEED), &data)?;
    let (manifest, root) = DatasetManifest::load(&data)?;
    let cfg = TrainConfig::toy(TOY_SEED);
    let mut first = cfg.clone();
    first.predictor.epochs = 1;
    let out = RunOutput::new(&run)?;

    let (mut models, mut early, mut discriminators) = (Vec::new(), Vec::new(), Vec::new());
    for entry in &manifest.identities {
        let id = entry.name.as_str();
        let train = split_cache(&manifest, &root, Split::Train, id)?;
        let val = split_cache(&manifest, &root, Split::Val, id)?;
        let (mut p, _) = train_predictor(&first, &train, Some(&val), id, cfg.predictor_adversary, Some(&out))?;
        early.push(p.model.clone());
        continue_predictor(&cfg, &mut p, &train, Some(&val), cfg.predictor_adversary, Some(&out))?;
        let (r, _) = train_reenactor(&cfg, &train, Some(&val), id, Some(&out))?;
        let (pp, rp) = checkpoint_paths(&run, id);
        p.to_checkpoint()?.save(&pp)?;
        r.to_checkpoint()?.save(&rp)?;
        discriminators.push(p.disc.clone());
        models.push(IdentityModels::new(id, p.model, r.model)?);
    }
    let report = evaluate_pipeline(&models, &manifest, &root, true)?;
    std::fs::write(run.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(ToyRun {
        _dir: dir,
        data,
        run,
        manifest,
        root,
        models,
        report,
        early,
        discriminators,
        elapsed: start.elapsed(),
    })
}

fn toy_ale(t: &ToyRun) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &t.report.identities {
        let ok = r.val_ale < 3.0 && r.val_ale * 5.0 <= r.mean_landmark_baseline;
        pass &= ok;
        parts.push(format!("{} {:.3} px (baseline {:.3}, {:.1}×)", r.identity, r.val_ale, r.mean_landmark_baseline, r.mean_landmark_baseline / r.val_ale));
    }
    Ok((pass, format!("validation ALE < 3.0 px and ≥ 5× better than mean landmarks: {}", parts.join("; "))))
}

fn toy_masked_l1(t: &ToyRun) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &t.report.identities {
        let ok = r.val_masked_l1 < 0.10 && r.val_masked_l1 * 3.0 <= r.mean_image_baseline;
        pass &= ok;
        parts.push(format!(
            "{} {:.4} (baseline {:.4}, {:.1}×)",
            r.identity, r.val_masked_l1, r.mean_image_baseline, r.mean_image_baseline / r.val_masked_l1
        ));
    }
    Ok((pass, format!("masked L1 < 0.10 and ≥ 3× better than the mean image: {}", parts.join("; "))))
}

fn toy_controllability(t: &ToyRun) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut rows: Vec<(String, &apbface_core::pipeline::Controllability)> = vec![("pooled".into(), &t.report.pooled)];
    for r in &t.report.identities {
        rows.push((r.identity.clone(), &r.controllability));
    }
    for (name, c) in rows {
        let min = c.min();
        pass &= min.is_some_and(|m| m > 0.9);
        parts.push(format!(
            "{name} yaw {:.3} pitch {:.3} roll {:.3} blink {:.3} (n={})",
            c.yaw.unwrap_or(f64::NAN),
            c.pitch.unwrap_or(f64::NAN),
            c.roll.unwrap_or(f64::NAN),
            c.blink.unwrap_or(f64::NAN),
            c.n
        ));
    }
    Ok((pass, format!("decoded vs driving Pearson r > 0.9: {}", parts.join("; "))))
}

fn toy_runtime(t: &ToyRun) -> Verdict {
    let s = t.elapsed.as_secs_f64();
    Ok((s <= 1800.0, format!("data generation, training and evaluation took {:.0} s (≤ 1800 s)", s)))
}

fn eye_extents(l: &LandmarkSet) -> [f64; 2] {
    [l.vertical_extent(&l.groups.left_eye), l.vertical_extent(&l.groups.right_eye)]
}

fn test_cache(t: &ToyRun, id: &str) -> Result<DatasetCache> {
    Ok(split_cache(&t.manifest, &t.root, Split::Test, id)?)
}

fn predictor_blink(t: &ToyRun) -> Verdict {
    let (mut total, mut ok) = (0, 0);
    for m in &t.models {
        for s in &test_cache(t, &m.identity)?.samples {
            let closed = eye_extents(&m.predict(&s.mfcc, s.pose, BlinkPair::both(0.0))?);
            let open = eye_extents(&m.predict(&s.mfcc, s.pose, BlinkPair::both(0.4))?);
            for k in 0..2 {
                total += 1;
                ok += (closed[k] < open[k]) as usize;
            }
        }
    }
    Ok((
        ok == total,
        format!("eye extent at blink (0,0) below (0.4,0.4) for {ok}/{total} eyes over all test samples"),
    ))
}

fn discriminator_direction(t: &ToyRun) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for ((m, early), d) in t.models.iter().zip(&t.early).zip(&t.discriminators) {
        let val = split_cache(&t.manifest, &t.root, Split::Val, &m.identity)?;
        let (mut real, mut fake) = (0.0, 0.0);
        for s in &val.samples {
            real += sigmoid(d.discriminate(&s.landmarks)?);
            fake += sigmoid(d.discriminate(&early.predict_landmarks(&s.mfcc, s.pose, s.blink)?)?);
        }
        let n = val.samples.len() as f64;
        let (real, fake) = (real / n, fake / n);
        pass &= real > fake;
        parts.push(format!("{} real {real:.3} vs epoch-1 generated {fake:.3}", m.identity));
    }
    Ok((pass, format!("trained landmark discriminator mean sigmoid: {}", parts.join("; "))))
}

// Adversarial ablation

fn ablation(t: &ToyRun) -> Verdict {
    let mut wins = 0;
    let mut parts = Vec::new();
    let caches: Vec<(String, DatasetCache, DatasetCache)> = IDS
        .iter()
        .map(|id| {
            Ok((
                id.to_string(),
                split_cache(&t.manifest, &t.root, Split::Train, id)?,
                split_cache(&t.manifest, &t.root, Split::Val, id)?,
            ))
        })
        .collect::<Result<_>>()?;
    for seed in [7, 8, 9] {
        let cfg = TrainConfig::toy(seed);
        let arm = |adv: bool| -> Result<f64> {
            let mut sum = 0.0;
            for (id, train, val) in &caches {
                // The seed-7 adversarial arm is the end-to-end run itself.
                let ale = if seed == TOY_SEED && adv {
                    t.report.identities.iter().find(|r| &r.identity == id).context("identity")?.val_ale
                } else {
                    let (p, _) = train_predictor(&cfg, train, Some(val), id, adv, None)?;
                    predictor_ale(&p.model, val)?
                };
                sum += ale;
            }
            Ok(sum / caches.len() as f64)
        };
        let (with, without) = (arm(true)?, arm(false)?);
        wins += (with < without) as usize;
        parts.push(format!("seed {seed}: {with:.3} vs {without:.3}"));
    }
    Ok((
        wins >= 2,
        format!("mean validation ALE with vs without the landmark discriminator, adversarial lower in {wins}/3: {}", parts.join("; ")),
    ))
}

// Determinism and persistence

fn read_tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root)?.to_string_lossy().into_owned(), std::fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

fn param_bits(m: &IdentityModels) -> Vec<u64> {
    let p = m.predictor.params().into_iter();
    let r = m.reenactor.params().into_iter();
    p.chain(r).flat_map(|p| p.value.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

fn persistence(t: &ToyRun) -> Verdict {
    // Single-threaded fixed-seed training, twice, with per-step logs.
    let small = tempfile::tempdir()?;
    let data = small.path().join("data");
    synth_dataset(&SynthConfig { n_samples: 60, resolution: 32, ..SynthConfig::toy(TOY_SEED) }, &data)?;
    let (m, root) = DatasetManifest::load(&data)?;
    let cfg = TrainConfig::tiny(TOY_SEED, 32, 3);
    let train = split_cache(&m, &root, Split::Train, "id0")?;
    let logs: Vec<(String, Vec<u8>)> = (0..2)
        .map(|k| {
            let out_dir = small.path().join(format!("run{k}"));
            let out = RunOutput::new(&out_dir)?;
            let (_, h) = with_mode(ExecMode::Sequential, || train_predictor(&cfg, &train, None, "id0", true, Some(&out)))?;
            let (_, hr) = with_mode(ExecMode::Sequential, || train_reenactor(&cfg, &train, None, "id0", Some(&out)))?;
            drop(out);
            let traj = serde_json::to_string(&(h.trajectory(), hr.trajectory()))?;
            Ok((traj, std::fs::read(out_dir.join("train_log.jsonl"))?))
        })
        .collect::<Result<_>>()?;
    let training_repro = logs[0] == logs[1] && !logs[0].1.is_empty();

    // Checkpoint round trip of the toy models.
    let mut ckpt_exact = true;
    for (m, id) in t.models.iter().zip(IDS) {
        let (pp, rp) = checkpoint_paths(&t.run, id);
        let pbytes = std::fs::read(&pp)?;
        let rbytes = std::fs::read(&rp)?;
        ckpt_exact &= PredictorTrainer::from_checkpoint(&Checkpoint::from_bytes(&pbytes)?)?.to_checkpoint()?.to_bytes()? == pbytes;
        ckpt_exact &= ReenactorTrainer::from_checkpoint(&Checkpoint::from_bytes(&rbytes)?)?.to_checkpoint()?.to_bytes()? == rbytes;
        ckpt_exact &= param_bits(&IdentityModels::load_dir(id, &t.run)?) == param_bits(m);
    }

    // Reloaded checkpoints reproduce the report.
    let reloaded: Vec<IdentityModels> = IDS.iter().map(|id| IdentityModels::load_dir(id, &t.run)).collect::<apbface_core::Result<_>>()?;
    let report_repro = evaluate_pipeline(&reloaded, &t.manifest, &t.root, true)? == t.report;

    // Full toy dataset regenerated from the same seed.
    let regen = tempfile::tempdir()?;
    synth_dataset(&SynthConfig::toy(TOY_SEED), regen.path())?;
    let (a, b) = (read_tree(&t.data)?, read_tree(regen.path())?);
    let data_repro = a == b;

    Ok((
        training_repro && ckpt_exact && report_repro && data_repro,
        format!(
            "single-threaded loss trajectory and step log identical {training_repro}, checkpoint round trip bit-exact {ckpt_exact}, \
             reloaded report identical {report_repro}, dataset regeneration byte-identical {data_repro} ({} files)",
            a.len()
        ),
    ))
}

// Service contract

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn post<T: serde::Serialize>(app: &Router, uri: &str, body: &T) -> (StatusCode, Vec<u8>) {
    call(app, "POST", uri, Some(serde_json::to_string(body).unwrap())).await
}

fn code(body: &[u8]) -> String {
    serde_json::from_slice::<ErrorBody>(body).map(|b| b.error.code).unwrap_or_default()
}

fn strip(r: &ReenactResponse) -> ReenactResponse {
    ReenactResponse { latency_ms: Default::default(), ..r.clone() }
}

async fn service_contract(t: &ToyRun) -> Verdict {
    let mut cfg = ServiceConfig::from_checkpoint_dir(t.manifest.features.clone(), &t.run, &IDS);
    let mut ghost = cfg.identities["id0"].clone();
    ghost.predictor = t.run.join("absent.ckpt");
    cfg.identities.insert("ghost".into(), ghost);
    let app = router(Arc::new(Service::from_config(&cfg)?));
    let mut failures: Vec<String> = Vec::new();
    let mut fail = |what: &str| failures.push(what.to_string());
    let mut requests = 0u64;
    let mut frames = 0u64;

    let (health, body) = call(&app, "GET", "/healthz", None).await;
    if health != StatusCode::OK || body != b"ok" {
        fail("healthz");
    }
    let (_, body) = call(&app, "GET", "/v1/stats", None).await;
    let fresh: StatsReport = serde_json::from_slice(&body)?;
    if fresh.request_count != 0 || fresh.frame_count != 0 || fresh.stages.predictor.count != 0 {
        fail("fresh stats not zero");
    }

    let test = test_cache(t, "id0")?;
    let s = &test.samples[0];
    let base = ReenactRequest {
        identity: "id0".into(),
        pcm: None,
        mfcc: Some(MfccInput { frames: s.mfcc.frames, coeffs: s.mfcc.coeffs, values: s.mfcc.values.clone() }),
        pose: s.pose,
        blink: s.blink,
        want_landmarks: true,
    };

    // Happy path, determinism, latency bookkeeping.
    let mut answers = Vec::new();
    for _ in 0..2 {
        let (st, body) = post(&app, "/v1/reenact", &base).await;
        requests += 1;
        if st != StatusCode::OK {
            fail("reenact status");
            continue;
        }
        frames += 1;
        let r: ReenactResponse = serde_json::from_slice(&body)?;
        let face = image::load_from_memory(&STANDARD.decode(&r.face_image)?)?;
        if (face.width(), face.height()) != (64, 64) || r.landmarks.len() != 20 || r.landmark_image.is_none() {
            fail("reenact payload shape");
        }
        if r.latency_ms.stage_sum() > r.latency_ms.total {
            fail("stage latencies exceed total");
        }
        answers.push(strip(&r));
    }
    if answers.len() == 2 && answers[0] != answers[1] {
        fail("repeated request differs");
    }

    // Documented error codes.
    let mut nobody = base.clone();
    nobody.identity = "nobody".into();
    let mut ghost_req = base.clone();
    ghost_req.identity = "ghost".into();
    let mut bad_audio = base.clone();
    bad_audio.mfcc.as_mut().unwrap().values.pop();
    for (req, status, want) in [
        (&nobody, StatusCode::NOT_FOUND, "unknown_identity"),
        (&bad_audio, StatusCode::UNPROCESSABLE_ENTITY, "malformed_audio"),
        (&ghost_req, StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded"),
    ] {
        let (st, body) = post(&app, "/v1/reenact", req).await;
        requests += 1;
        if st != status || code(&body) != want {
            fail(want);
        }
    }

    // Sweeps.
    let sweep = |variable: &str, range: [f64; 2], steps: usize| SweepRequest {
        variable: variable.into(),
        range,
        steps,
        base: base.clone(),
    };
    let (st, body) = post(&app, "/v1/sweep", &sweep("yaw", [-0.3, 0.15], 5)).await;
    requests += 1;
    let yaw: Vec<ReenactResponse> = if st == StatusCode::OK { serde_json::from_slice(&body)? } else { Vec::new() };
    frames += yaw.len() as u64;
    let one_var = yaw.len() == 5
        && yaw.iter().all(|f| f.pose.pitch == base.pose.pitch && f.pose.roll == base.pose.roll && f.blink == base.blink)
        && yaw.windows(2).all(|w| w[0].pose.yaw < w[1].pose.yaw);
    if !one_var {
        fail("yaw sweep does not vary exactly yaw");
    }

    let (st, body) = post(&app, "/v1/sweep", &sweep("roll", [0.2, 0.4], 1)).await;
    requests += 1;
    let single: Vec<ReenactResponse> = if st == StatusCode::OK { serde_json::from_slice(&body)? } else { Vec::new() };
    frames += single.len() as u64;
    let mut at_lo = base.clone();
    at_lo.pose.roll = 0.2;
    let (_, body) = post(&app, "/v1/reenact", &at_lo).await;
    requests += 1;
    frames += 1;
    let direct: ReenactResponse = serde_json::from_slice(&body)?;
    if single.len() != 1 || strip(&single[0]) != strip(&direct) {
        fail("single-step sweep differs from reenact at lo");
    }

    let (st, body) = post(&app, "/v1/sweep", &sweep("mouth", [0.0, 1.0], 3)).await;
    requests += 1;
    if st != StatusCode::UNPROCESSABLE_ENTITY || code(&body) != "unknown_variable" {
        fail("unknown sweep variable");
    }

    // Blink sweep on the trained model, several held-out bases per identity.
    let (mut monotone, mut sweeps) = (0, 0);
    for id in IDS {
        for s in test_cache(t, id)?.samples.iter().take(5) {
            let mut b = base.clone();
            b.identity = id.into();
            b.mfcc = Some(MfccInput { frames: s.mfcc.frames, coeffs: s.mfcc.coeffs, values: s.mfcc.values.clone() });
            b.pose = s.pose;
            let req = SweepRequest { variable: "blink".into(), range: [0.0, 0.5], steps: 6, base: b };
            let (st, body) = post(&app, "/v1/sweep", &req).await;
            requests += 1;
            sweeps += 1;
            if st != StatusCode::OK {
                continue;
            }
            let fs: Vec<ReenactResponse> = serde_json::from_slice(&body)?;
            frames += fs.len() as u64;
            let groups = IndexGroups::toy20();
            let ext: Vec<[f64; 2]> = fs
                .iter()
                .map(|f| eye_extents(&LandmarkSet { points: f.landmarks.clone(), groups: groups.clone() }))
                .collect();
            if ext.windows(2).all(|w| w[0][0] < w[1][0] && w[0][1] < w[1][1]) {
                monotone += 1;
            }
        }
    }
    if monotone != sweeps {
        fail("blink sweep eye extent not strictly increasing");
    }

    let (_, body) = call(&app, "GET", "/v1/stats", None).await;
    let stats: StatsReport = serde_json::from_slice(&body)?;
    if stats.request_count != requests || stats.frame_count != frames || stats.error_count != 4 {
        fail("stats counters");
    }
    let env = &stats.environment;
    println!(
        "       throughput: predictor {:.0} FPS, reenactor {:.0} FPS, end to end {:.0} FPS (p50 {:.2} ms) on {}/{} with {} thread(s)",
        stats.stages.predictor.fps,
        stats.stages.reenactor.fps,
        stats.stages.total.fps,
        stats.stages.total.p50_ms,
        env.os,
        env.arch,
        env.threads
    );

    Ok((
        failures.is_empty(),
        format!(
            "reenact, 404/422/503 codes, one-variable sweeps, blink sweep strictly increasing in {monotone}/{sweeps}, \
             stats {} requests {} frames{}",
            stats.request_count,
            stats.frame_count,
            if failures.is_empty() { String::new() } else { format!(", failures: {failures:?}") }
        ),
    ))
}

fn run_criterion(name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => (false, format!("error: {e:#}")),
        Err(p) => (
            false,
            format!("panic: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()),
        ),
    };
    println!("{} {name} [{:.0} s]: {detail}", if pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    pass
}

fn main() {
    // Under `cargo test -- --list` or filters meant for other targets, stay silent.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if args.iter().any(|a| !a.starts_with('-')) && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }

    println!("acceptance suite");
    let mut results = Vec::new();
    results.push(run_criterion("gradient suite", gradients));
    results.push(run_criterion("oracle equivalence", oracles));

    let toy = match catch_unwind(toy_run) {
        Ok(Ok(t)) => Some(t),
        Ok(Err(e)) => {
            println!("       toy run failed: {e:#}");
            None
        }
        Err(_) => {
            println!("       toy run panicked");
            None
        }
    };
    let need = || toy.as_ref().context("toy run unavailable");
    results.push(run_criterion("toy end-to-end (a) landmark ALE", || toy_ale(need()?)));
    results.push(run_criterion("toy end-to-end (b) masked L1", || toy_masked_l1(need()?)));
    results.push(run_criterion("toy end-to-end (c) controllability", || toy_controllability(need()?)));
    results.push(run_criterion("toy end-to-end runtime", || toy_runtime(need()?)));
    results.push(run_criterion("toy predictor blink response", || predictor_blink(need()?)));
    results.push(run_criterion("toy landmark discriminator direction", || discriminator_direction(need()?)));
    results.push(run_criterion("adversarial ablation direction", || ablation(need()?)));
    results.push(run_criterion("determinism and persistence", || persistence(need()?)));
    results.push(run_criterion("service contract", || {
        let rt = tokio::runtime::Runtime::new()?;
        rt.block_on(service_contract(need()?))
    }));

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
