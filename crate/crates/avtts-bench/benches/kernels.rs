//! Benchmarks for the hot paths: matmul, the full model forward pass,
//! mel extraction, and pitch extraction.

use avtts::audio::{extract_f0, mel_spectrogram, AudioConfig};
use avtts::dataset::cache::FeatureStats;
use avtts::dataset::AffectPoint;
use avtts::model::{forward, ForwardInput, ModelParams, Stage, Teacher};
use avtts::nn::{Graph, Tensor};
use avtts_bench::bench_model;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let numel: usize = shape.iter().product();
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
    let data: Vec<f32> = (0..numel)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f32 / (1u64 << 31) as f32) - 1.0
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

fn bench_matmul(c: &mut Criterion) {
    let a = rand_tensor(&[128, 256], 1);
    let b = rand_tensor(&[256, 256], 2);
    c.bench_function("matmul_128x256x256", |bench| {
        bench.iter(|| {
            let mut g: Graph<f32> = Graph::new();
            let x = g.input(black_box(a.clone()));
            let y = g.input(black_box(b.clone()));
            let z = g.matmul(x, y).unwrap();
            black_box(g.value(z).data()[0])
        })
    });
}

fn bench_forward(c: &mut Criterion) {
    let cfg = bench_model();
    let params = ModelParams::init(cfg.clone(), 7).unwrap();
    let stats = FeatureStats {
        pitch_log_mean: 5.2,
        pitch_log_std: 0.3,
        energy_mean: 10.0,
        energy_std: 4.0,
        pitch_norm_min: -2.5,
        pitch_norm_max: 2.5,
        energy_norm_min: -2.0,
        energy_norm_max: 3.0,
    };
    let input = ForwardInput {
        phoneme_ids: (3..35).collect(),
        mask: vec![true; 32],
        speaker: {
            let mut v = vec![0.0f32; 256];
            v[0] = 1.0;
            v
        },
        affect: Some(AffectPoint::new(5.0, 3.0)),
    };
    let teacher = Teacher {
        durations: Some(vec![4; 32]),
        pitch: Some(vec![0.1; 128]),
        energy: Some(vec![0.2; 128]),
    };
    c.bench_function("forward_32ph_128fr", |bench| {
        bench.iter(|| {
            let mut g: Graph<f32> = Graph::new();
            let out = forward(&mut g, &params.tensors, &cfg, &stats, &input, Stage::Two, &teacher)
                .unwrap();
            black_box(g.value(out.mel).data()[0])
        })
    });
}

fn bench_dsp(c: &mut Criterion) {
    let acfg = AudioConfig::default();
    let sr = acfg.sample_rate as f32;
    let samples: Vec<f32> = (0..acfg.sample_rate as usize)
        .map(|i| 0.4 * (2.0 * std::f32::consts::PI * 180.0 * i as f32 / sr).sin())
        .collect();
    c.bench_function("mel_1s", |bench| {
        bench.iter(|| black_box(mel_spectrogram(black_box(&samples), &acfg).unwrap().n_frames))
    });
    c.bench_function("f0_1s", |bench| {
        bench.iter(|| black_box(extract_f0(black_box(&samples), &acfg).f0.len()))
    });
}

criterion_group!(benches, bench_matmul, bench_forward, bench_dsp);
criterion_main!(benches);
