use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use hfcseg::cluster::{kmeans_cluster, sinkhorn_assign, SinkhornConfig};
use hfcseg::generator::LatentMode;
use hfcseg::nn::{Activation, LayerKind, LayerParams};
use hfcseg::pipeline::Featurizer;
use hfcseg::rng::rng_from;
use hfcseg::segmenter::{build_segmenter, predict_mask, SegmenterSpec};
use hfcseg::swav::{init_model, SwavTrainConfig};
use hfcseg_bench::{default_generator, random_tensor, sample_features};

fn layers(c: &mut Criterion) {
    let mut group = c.benchmark_group("layers");
    let mut rng = rng_from(1);
    let dense = LayerParams::init(LayerKind::Dense, 104, 32, Activation::LeakyRelu(0.01), &mut rng);
    let rows = random_tensor(&[4096, 104], 2);
    group.bench_function("dense_forward_4096x104", |b| {
        b.iter(|| dense.forward(black_box(&rows)).unwrap())
    });
    let (out, tape) = dense.forward(&rows).unwrap();
    group.bench_function("dense_backward_4096x104", |b| {
        b.iter(|| dense.backward(&tape, black_box(&out)).unwrap())
    });
    let conv = LayerParams::init(LayerKind::Conv3x3, 32, 16, Activation::LeakyRelu(0.01), &mut rng);
    let image = random_tensor(&[32, 64, 64], 3);
    group.bench_function("conv3x3_forward_32to16_64px", |b| {
        b.iter(|| conv.forward(black_box(&image)).unwrap())
    });
    let (out, tape) = conv.forward(&image).unwrap();
    group.bench_function("conv3x3_backward_32to16_64px", |b| {
        b.iter(|| conv.backward(&tape, black_box(&out)).unwrap())
    });
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let mut group = c.benchmark_group("clustering");
    for k in [64, 256] {
        let scores = random_tensor(&[k, 1280], 4);
        let cfg = SinkhornConfig::for_prototypes(k);
        group.bench_with_input(BenchmarkId::new("sinkhorn_10_sweeps", k), &scores, |b, s| {
            b.iter(|| sinkhorn_assign(black_box(s), &cfg).unwrap())
        });
    }
    let points = random_tensor(&[4096, 104], 5);
    group.sample_size(10);
    group.bench_function("kmeans_k64_20_iterations", |b| {
        b.iter(|| kmeans_cluster(black_box(&points), 64, 20, &mut rng_from(6)).unwrap())
    });
    group.finish();
}

fn generator(c: &mut Criterion) {
    let g = default_generator();
    let latents = g.sample_latents(7, LatentMode::Broadcast);
    c.bench_function("generator_features", |b| {
        b.iter(|| g.features(black_box(&latents)).unwrap())
    });
}

/// Per-image segmentation cost for each featurizer, features precomputed.
fn inference(c: &mut Criterion) {
    let g = default_generator();
    let pf = sample_features(&g, 8);
    let table = g.spec().label_table();
    let mut rng = rng_from(9);
    let model = init_model(g.spec().hidden_channels(), &SwavTrainConfig::default(), &mut rng);
    let spec = SegmenterSpec {
        class_count: g.spec().class_count(),
        ..Default::default()
    };
    let mut group = c.benchmark_group("inference");
    group.sample_size(20);
    for f in [Featurizer::Raw, Featurizer::Projected(model)] {
        let seg = build_segmenter(&spec, f.width(g.spec().hidden_channels()), &mut rng).unwrap();
        group.bench_function(f.name(), |b| {
            b.iter(|| {
                let input = f.input(black_box(&pf)).unwrap();
                predict_mask(&seg, &input, &table).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, layers, clustering, generator, inference);
criterion_main!(benches);
