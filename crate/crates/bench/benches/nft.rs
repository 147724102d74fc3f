use criterion::{criterion_group, criterion_main};

criterion_group!(benches, nft_bench::transforms, nft_bench::tcn, nft_bench::training_step);
criterion_main!(benches);
