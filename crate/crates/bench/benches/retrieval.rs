use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use factline::retrieval::{in_batch_loss, IndexEntry, PassageIndex};
use factline::EmbeddingVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn random_index(n: usize, dim: usize) -> PassageIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let entries = (0..n)
        .map(|i| IndexEntry {
            passage_id: format!("p{i:07}"),
            text: String::new(),
            vector: random_vector(&mut rng, dim),
        })
        .collect();
    PassageIndex::from_entries(entries).unwrap()
}

fn top_k(c: &mut Criterion) {
    let mut group = c.benchmark_group("top_k");
    for n in [10_000, 100_000] {
        let index = random_index(n, 384);
        let query = random_vector(&mut ChaCha8Rng::seed_from_u64(8), 384);
        for k in [10, 30] {
            group.bench_with_input(BenchmarkId::new(format!("n{n}"), k), &k, |b, &k| {
                b.iter(|| index.top_k(black_box(&query), k).unwrap())
            });
        }
    }
    group.finish();
}

fn loss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut batch = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..384).map(|_| rng.random_range(-0.1..0.1)).collect())
            .collect()
    };
    let (claims, passages) = (batch(64), batch(64));
    c.bench_function("in_batch_loss/64x384", |b| {
        b.iter(|| in_batch_loss(black_box(&claims), black_box(&passages)))
    });
}

criterion_group!(benches, top_k, loss);
criterion_main!(benches);
