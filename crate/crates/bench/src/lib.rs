use std::hint::black_box;

use criterion::{BenchmarkId, Criterion};
use nft_core::{
    forward_2dft, inverse_2dft, BatchObjective, Differentiable, FourierBasisPair, ModelConfig, NftModel, Tcn,
    TcnConfig, Tensor, TimeAxis,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic inputs in `[-1, 1)`.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

pub fn transforms(c: &mut Criterion) {
    let mut g = c.benchmark_group("2dft");
    for (m, h) in [(2, 10), (7, 24), (12, 24)] {
        let basis = FourierBasisPair::new(m, 8, 48, h).unwrap();
        let y = random_tensor(&[m, h], 1);
        let coeffs = forward_2dft(&y, &basis, TimeAxis::Forecast).unwrap();
        g.bench_with_input(BenchmarkId::new("forward", format!("M{m}_H{h}")), &y, |b, y| {
            b.iter(|| forward_2dft(black_box(y), &basis, TimeAxis::Forecast).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("inverse", format!("M{m}_H{h}")), &coeffs, |b, c| {
            b.iter(|| inverse_2dft(black_box(c), &basis, TimeAxis::Forecast).unwrap())
        });
    }
    g.finish();
}

pub fn tcn(c: &mut Criterion) {
    let mut g = c.benchmark_group("tcn");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for m in [4, 12] {
        let net = Tcn::new("bench", TcnConfig::with_defaults(m), &mut rng).unwrap();
        let x = random_tensor(&[8, m, 48], 3);
        g.bench_with_input(BenchmarkId::new("forward_b8_t48", m), &x, |b, x| {
            b.iter(|| net.forward(black_box(x)).unwrap())
        });
    }
    g.finish();
}

pub fn training_step(c: &mut Criterion) {
    let (m, t, h) = (4, 48, 12);
    let windows = (0..32)
        .map(|i| (random_tensor(&[m, t], 10 + i), random_tensor(&[m, h], 100 + i)))
        .collect();
    let model = NftModel::new(ModelConfig::new(m, t, h)).unwrap();
    let mut objective = BatchObjective::new(model, windows).unwrap();
    c.bench_function("loss_and_grad_batch32_default_model", |b| {
        b.iter(|| objective.loss_and_grad().unwrap())
    });
}
