use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use siamstereo::correlation::{inner_product_volume, Pairing};
use siamstereo::inference::{infer, InferConfig};
use siamstereo::ops::{conv2d, deconv2, ConvGeometry};
use siamstereo::rng::{stream, uniform_tensor, Stream};
use siamstereo::siamese::{ArchSpec, InitConfig, Preset};
use siamstereo::{CorrMode, ScoreRoute, Shape4, StereoModel};
use siamstereo_bench::{random_features, random_tensor, ready_model, stereo_pair};

fn convolutions(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv");
    let x = random_tensor(Shape4::new(8, 64, 28, 28), 1);
    let w = random_tensor(Shape4::new(64, 64, 3, 3), 2);
    let b = vec![0.0f32; 64];
    g.bench_function("conv3x3_8x64x28x28", |bch| {
        bch.iter(|| conv2d(black_box(&x), &w, &b, ConvGeometry::same(3, 3)).unwrap())
    });
    let x = random_tensor(Shape4::new(8, 64, 14, 14), 3);
    g.bench_function("deconv2_8x64x14x14", |bch| {
        bch.iter(|| deconv2(black_box(&x), &w, &b).unwrap())
    });
    g.finish();
}

fn correlation(c: &mut Criterion) {
    let mut g = c.benchmark_group("correlation");
    let (theta, rows, cols, d) = (64, 8, 256, 64);
    let l = random_features(theta, rows, cols, 4);
    let r = random_features(theta, rows, cols, 5);
    g.bench_function("inner_8x256_d64", |b| {
        b.iter(|| inner_product_volume(black_box(l.view()), r.view(), d).unwrap())
    });
    let arch = ArchSpec::preset(Preset::S4).with_theta(theta);
    let model = StereoModel::<f32>::build(&arch, CorrMode::Learned, InitConfig::default(), 6).unwrap();
    for route in [ScoreRoute::Factored, ScoreRoute::Psi] {
        g.bench_with_input(
            BenchmarkId::new("learned_8x256_d64", format!("{route:?}")),
            &route,
            |b, &route| {
                b.iter(|| {
                    model
                        .scores(black_box(l.view()), r.view(), Pairing::full_image(d), 0..rows, route)
                        .unwrap()
                })
            },
        );
    }
    g.finish();
}

fn inference(c: &mut Criterion) {
    let mut g = c.benchmark_group("inference");
    g.sample_size(10);
    let pair = stereo_pair(64, 96, 16);
    for (preset, corr) in [
        (Preset::S4, CorrMode::Inner),
        (Preset::S4, CorrMode::Learned),
        (Preset::S7, CorrMode::Inner),
    ] {
        let model = ready_model(preset, corr, 64, &pair.left);
        g.bench_function(format!("{preset}_{corr}_64x96_d16"), |b| {
            b.iter(|| infer(&model, black_box(&pair.left), &pair.right, &InferConfig::new(16)).unwrap())
        });
    }
    let big = uniform_tensor::<f32>(Shape4::new(1, 1, 128, 384), &mut stream(8, Stream::Test));
    let model = ready_model(Preset::S4, CorrMode::Learned, 64, &big);
    g.bench_function("s4_learned_128x384_d64", |b| {
        b.iter(|| infer(&model, black_box(&big), &big, &InferConfig::new(64)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, convolutions, correlation, inference);
criterion_main!(benches);
