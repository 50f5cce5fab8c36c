use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use replica_sync::diffusion::{make_vp_schedule, AnalyticBackend, ScoreBackend};
use replica_sync::dit::{gated_attention, AttentionWeights, DitConfig, DitModel};
use replica_sync::numerics::rng::{gaussian_matrix, gaussian_vec, rng_for};
use replica_sync::numerics::sym_eig;
use replica_sync::protocols::{build_mode_basis, ImagePrior};
use replica_sync::speciation::solve_self_consistency;

fn attention(c: &mut Criterion) {
    let d = 32;
    let mut rng = rng_for(1, &[]);
    let s = 1.0 / (d as f64).sqrt();
    let w = AttentionWeights {
        wq: gaussian_matrix(&mut rng, d, d).scale(s),
        wk: gaussian_matrix(&mut rng, d, d).scale(s),
        wv: gaussian_matrix(&mut rng, d, d).scale(s),
        wo: gaussian_matrix(&mut rng, d, d).scale(s),
    };
    let x = gaussian_matrix(&mut rng, 32, d);
    c.bench_function("gated_attention 2x16 tokens, d=32", |b| {
        b.iter(|| gated_attention(&w, 16, black_box(&x), 0.5).unwrap())
    });
}

fn networks(c: &mut Criterion) {
    let sched = make_vp_schedule(100, 1e-3, 0.2).unwrap();
    let model = DitModel::random(DitConfig::default()).unwrap();
    let za = gaussian_vec(&mut rng_for(2, &[0]), 64);
    let zb = gaussian_vec(&mut rng_for(2, &[1]), 64);
    c.bench_function("dit predict_pair, 4 layers", |b| {
        b.iter(|| model.predict_pair(black_box(&za), black_box(&zb), 50, 0.5, true).unwrap())
    });
    let mix = ImagePrior::default().mixture().unwrap();
    let analytic = AnalyticBackend::new(&mix, &sched).unwrap();
    c.bench_function("analytic predict, 64-d mixture", |b| b.iter(|| analytic.predict(black_box(&za), 50).unwrap()));
}

fn linear_algebra(c: &mut Criterion) {
    let a = gaussian_matrix(&mut rng_for(3, &[]), 64, 64);
    let sym = a.matmul_transposed(&a).unwrap();
    c.bench_function("jacobi eigen 64x64", |b| b.iter(|| sym_eig(black_box(&sym)).unwrap()));
    let v0 = gaussian_matrix(&mut rng_for(4, &[]), 32, 512);
    c.bench_function("mode basis M=32 D=512 k=16", |b| b.iter(|| build_mode_basis(black_box(&v0), 16, 0).unwrap()));
    c.bench_function("self-consistency root", |b| b.iter(|| solve_self_consistency(black_box(2.0)).unwrap()));
}

criterion_group!(benches, attention, networks, linear_algebra);
criterion_main!(benches);
