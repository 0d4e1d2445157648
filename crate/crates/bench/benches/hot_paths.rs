use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use phonodiff_core::data::{corpus_utterance, frame_aligned_log_mel, CorpusConfig};
use phonodiff_core::model::LossWeights;
use phonodiff_core::nn::Conv1d;
use phonodiff_core::schedule::ScheduleConfig;
use phonodiff_core::train::example_from;
use phonodiff_core::{rng, GradStore, MelConfig, Model, ModelConfig, ParamStore};

fn conv(c: &mut Criterion) {
    let mut store = ParamStore::<f32>::new();
    let layer = Conv1d::new(&mut store, "c", 64, 64, 3, 2, 1.0, &mut rng::seeded(0));
    let x = Array2::<f32>::from_shape_fn((640, 64), |(i, j)| ((i * 7 + j) % 13) as f32 / 13.0 - 0.5);
    c.bench_function("conv1d 64->64 k3 x640 forward", |b| {
        b.iter(|| layer.forward(&store, black_box(x.view())).unwrap())
    });
    let d = x.clone();
    c.bench_function("conv1d 64->64 k3 x640 backward", |b| {
        b.iter(|| {
            let mut g = GradStore::zeros_like(&store);
            layer.backward(&store, x.view(), black_box(d.view()), &mut g)
        })
    });
}

fn training_pass(c: &mut Criterion) {
    let cfg = CorpusConfig::default();
    let u = corpus_utterance(&cfg, 0, 0).unwrap();
    let ex = example_from::<f32>(&u, None).unwrap();
    let (model, params) = Model::from_seed::<f32>(ModelConfig::desk(), 0).unwrap();
    let schedule = ScheduleConfig::desk().build().unwrap();
    let mut r = rng::seeded(1);
    c.bench_function("desk train_pass (window 16)", |b| {
        b.iter(|| model.train_pass(&params, &ex, &schedule, LossWeights::default(), &mut r).unwrap())
    });
    let short = schedule.inference_schedule(5).unwrap();
    c.bench_function("desk synthesis, 5 steps", |b| {
        b.iter(|| model.synthesize(&params, &u.tokens, None, &short, &mut r).unwrap())
    });
}

fn features(c: &mut Criterion) {
    let cfg = CorpusConfig::default();
    let u = corpus_utterance(&cfg, 0, 0).unwrap();
    let wave: Vec<f64> = u.waveform.iter().map(|&v| v as f64).collect();
    let mel = MelConfig::default();
    c.bench_function("frame-aligned log-mel, one utterance", |b| {
        b.iter(|| frame_aligned_log_mel(black_box(&wave), &mel).unwrap())
    });
}

criterion_group!(benches, conv, training_pass, features);
criterion_main!(benches);
