use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fcnt_core::data::{compose_mosaic, mosaic_spec, standard_bank, DatasetConfig};
use fcnt_core::metrics::{evaluate_suite, Matching, DEFAULT_THRESHOLD};
use fcnt_core::model::{backward, forward, prepare_input};
use fcnt_core::ops::{conv2d_forward, softmax_xent_pixelwise, ConvParams};
use fcnt_core::refine::refine;
use fcnt_core::{build_fcnt, predict_labels, LabelMap, NetworkSpec, ScoreVolume, Tensor};

fn ramp(shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |n, c, y, x| {
        (((n + 3 * c + 5 * y + 7 * x) % 17) as f64 - 8.0) / 8.0
    })
}

fn conv(c: &mut Criterion) {
    let x = ramp([1, 16, 64, 64]);
    let p = ConvParams::new(ramp([32, 16, 3, 3]), vec![0.0; 32], 1, 1).unwrap();
    c.bench_function("conv3x3 16->32 64x64", |b| {
        b.iter(|| conv2d_forward(black_box(&x), &p).unwrap())
    });
}

fn train_step(c: &mut Criterion) {
    let spec = NetworkSpec::compact(5);
    let state = build_fcnt(&spec, 1).unwrap();
    let img = prepare_input(&ramp([1, 1, 64, 64]), &spec).unwrap();
    let labels = LabelMap::filled(64, 64, 2);
    c.bench_function("compact forward+backward 64x64", |b| {
        b.iter(|| {
            let (scores, cache) = forward(&state, black_box(&img)).unwrap();
            let loss = softmax_xent_pixelwise(&scores, &labels).unwrap();
            backward(&state, &cache, &loss.grad).unwrap()
        })
    });
}

fn mosaic_scores() -> (ScoreVolume, LabelMap) {
    let config = DatasetConfig {
        test_size: 128,
        ..DatasetConfig::default()
    };
    let (_, gt) = compose_mosaic(&mosaic_spec(&config, 0), &standard_bank(5)).unwrap();
    let scores = ScoreVolume::from_fn(5, 128, 128, |k, y, x| {
        let noise = (((y * 131 + x * 71 + k * 29) % 23) as f64 - 11.0) / 11.0;
        f64::from(gt.get(y, x) as usize == k) + 0.8 * noise
    });
    (scores, gt)
}

fn refinement(c: &mut Criterion) {
    let (scores, gt) = mosaic_scores();
    let n = gt.classes().len();
    c.bench_function("refine 5x128x128", |b| {
        b.iter(|| refine(black_box(&scores), n).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let (scores, gt) = mosaic_scores();
    let pred = predict_labels(&scores);
    let names = vec!["m".to_string()];
    c.bench_function("evaluate 128x128 hungarian", |b| {
        b.iter(|| {
            evaluate_suite(
                &names,
                std::slice::from_ref(black_box(&pred)),
                std::slice::from_ref(&gt),
                Matching::Hungarian,
                DEFAULT_THRESHOLD,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, conv, train_step, refinement, metrics);
criterion_main!(benches);
