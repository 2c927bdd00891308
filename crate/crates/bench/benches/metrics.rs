use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use factline::evalharness::{balanced_accuracy, easiness_f1, rouge1_f1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 16] = [
    "the", "forest", "river", "covers", "basin", "nine", "nations", "brazil", "rain", "moist",
    "of", "a", "south", "america", "region", "most",
];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    (0..rng.random_range(6..20))
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (a, b) = (sentence(&mut rng), sentence(&mut rng));
    c.bench_function("rouge1_f1", |bench| {
        bench.iter(|| rouge1_f1(black_box(&a), black_box(&b)))
    });

    let candidates: Vec<String> = (0..8).map(|_| sentence(&mut rng)).collect();
    let gold: Vec<String> = (0..8).map(|_| sentence(&mut rng)).collect();
    c.bench_function("easiness_f1/8x8", |bench| {
        bench.iter(|| easiness_f1(black_box(&candidates), black_box(&gold)))
    });

    let golds: Vec<bool> = (0..10_000).map(|i| i % 2 == 0).collect();
    let preds: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.5)).collect();
    c.bench_function("balanced_accuracy/10k", |bench| {
        bench.iter(|| balanced_accuracy(black_box(&preds), black_box(&golds)))
    });
}

criterion_group!(benches, metrics);
criterion_main!(benches);
