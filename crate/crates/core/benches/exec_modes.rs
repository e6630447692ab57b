//! Sequential vs data-parallel execution of the batched kernels, plus
//! batch-1 inference throughput of both networks.

use apbface_core::audio::{AudioTrack, FeatureConfig, MfccExtractor};
use apbface_core::exec::{self, with_mode, ExecMode};
use apbface_core::geometry::{BlinkPair, PoseTriple, PredictorArch, PredictorInput, PredictorModel};
use apbface_core::metrics::ssim;
use apbface_core::nn::{Init, Tensor};
use apbface_core::reenact::{FaceImage, ReenactorArch, ReenactorModel};
use apbface_core::render::{rasterize, POINT_RADIUS};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn predictor_input(batch: usize, rng: &mut ChaCha8Rng) -> PredictorInput {
    let cfg = FeatureConfig::default();
    let ex = MfccExtractor::new(&cfg).unwrap();
    let feats: Vec<_> = (0..batch)
        .map(|i| {
            let t = AudioTrack::sine(200.0 + 30.0 * i as f64, 0.5, 0.0, cfg.window_len(), cfg.sample_rate);
            ex.extract(&t).unwrap()
        })
        .collect();
    let items: Vec<_> = feats
        .iter()
        .map(|f| (f, PoseTriple::new(rng.gen_range(-0.3..0.2), 0.0, 0.1), BlinkPair::both(0.3)))
        .collect();
    PredictorInput::from_samples(&items)
}

fn modes(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let predictor = PredictorModel::new(PredictorArch::toy(), Init::DEFAULT, &mut rng).unwrap();
    let reenactor = ReenactorModel::new(ReenactorArch::toy(), Init::DEFAULT, &mut rng).unwrap();
    let input = predictor_input(32, &mut rng);
    let faces: Vec<FaceImage> = (0..16)
        .map(|_| FaceImage::new(64, (0..3 * 64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let landmarks = predictor.predict_batch(&input).unwrap();
    let images: Vec<Vec<f64>> = (0..8)
        .map(|i| {
            let l = apbface_core::geometry::LandmarkSet::from_flat(landmarks.sample(i), PredictorArch::toy().groups);
            rasterize(&l, 64, POINT_RADIUS).unwrap().to_signed()
        })
        .collect();
    let x = Tensor::stack(&images, [1, 64, 64]);

    let mut g = c.benchmark_group("exec_modes");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::new("predictor_batch32", name), &mode, |b, &m| {
            b.iter(|| with_mode(m, || predictor.predict_batch(&input).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("reenactor_batch8", name), &mode, |b, &m| {
            b.iter(|| with_mode(m, || reenactor.forward(&x).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("ssim_16_pairs", name), &mode, |b, &m| {
            b.iter(|| {
                with_mode(m, || exec::map_indexed(faces.len() - 1, |i| ssim(&faces[i], &faces[i + 1]).unwrap()))
            })
        });
    }
    g.finish();

    let one = predictor_input(1, &mut rng);
    let x1 = Tensor::stack(&images[..1], [1, 64, 64]);
    let mut g = c.benchmark_group("inference_batch1");
    g.throughput(Throughput::Elements(1));
    g.bench_function("predictor", |b| b.iter(|| predictor.predict_batch(&one).unwrap()));
    g.bench_function("reenactor", |b| b.iter(|| reenactor.forward(&x1).unwrap()));
    g.finish();
}

criterion_group!(benches, modes);
criterion_main!(benches);
