//! Parallel-versus-sequential benchmarks for the data-parallel hot loops:
//! query-group scoring during evaluation and the k-means assignment step.
//!
//! Requires the `parallel` feature (on by default) so both paths exist in
//! one binary:
//!
//! ```text
//! cargo bench -p contir
//! ```

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use contir::data::{generate_synthetic, EmbeddingMatrix, Sample, SyntheticConfig, SyntheticStyle};
use contir::exec;
use contir::rankers::{default_kernels, HeadKind, Ranker, RankerConfig, TokenizedPair};
use contir::seeding;
use rand::RngExt;

fn scoring_workload() -> (
    Ranker,
    contir::autodiff::ParameterSet,
    contir::data::Vocabulary,
    Vec<Vec<Sample>>,
) {
    let (dataset, _) = generate_synthetic(&SyntheticConfig {
        tasks: 1,
        vocab_per_topic: 150,
        common_tokens: 50,
        train_queries: 10,
        test_queries: 64,
        docs_per_query: 8,
        style: SyntheticStyle::Semantic,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let config = RankerConfig {
        embedding_dim: 32,
        query_len: 6,
        doc_len: 14,
        kernels: default_kernels(11),
        ..RankerConfig::new(HeadKind::Knrm)
    };
    let ranker = Ranker::new(config).unwrap();
    let embedding = EmbeddingMatrix::random(&dataset.vocab, 32, 7);
    let params = ranker.init_params(&embedding, 7).unwrap();
    // Group test rows per query, as evaluation does.
    let mut groups: Vec<Vec<Sample>> = Vec::new();
    let mut last: Option<String> = None;
    for row in &dataset.tasks[0].test {
        if last.as_deref() != Some(&row.query_id) {
            groups.push(Vec::new());
            last = Some(row.query_id.clone());
        }
        groups.last_mut().unwrap().push(row.clone());
    }
    let vocab = dataset.vocab;
    (ranker, params, vocab, groups)
}

fn bench_query_scoring(c: &mut Criterion) {
    let (ranker, params, vocab, groups) = scoring_workload();
    let score_group = |rows: &Vec<Sample>| -> f64 {
        let pairs: Vec<TokenizedPair> = rows
            .iter()
            .map(|r| TokenizedPair::from_sample(r, &vocab, 6, 14).unwrap())
            .collect();
        ranker.score_batch(&pairs, &params).unwrap().iter().sum()
    };

    let mut group = c.benchmark_group("query_scoring");
    group.bench_with_input(BenchmarkId::new("sequential", groups.len()), &groups, |b, gs| {
        b.iter(|| black_box(exec::map_seq(gs, score_group)))
    });
    group.bench_with_input(BenchmarkId::new("parallel", groups.len()), &groups, |b, gs| {
        b.iter(|| black_box(exec::map_par(gs, score_group)))
    });
    group.finish();
}

fn bench_kmeans_assignment(c: &mut Criterion) {
    let mut rng = seeding::stream(11, "bench-points", 0);
    let points: Vec<Vec<f64>> = (0..20_000)
        .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let centroids: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let nearest = |p: &Vec<f64>| -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (c_idx, centroid) in centroids.iter().enumerate() {
            let d: f64 = p
                .iter()
                .zip(centroid)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            if d < best.1 {
                best = (c_idx, d);
            }
        }
        best
    };

    let mut group = c.benchmark_group("kmeans_assignment");
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(exec::map_seq(&points, nearest)))
    });
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(exec::map_par(&points, nearest)))
    });
    group.finish();
}

criterion_group!(benches, bench_query_scoring, bench_kmeans_assignment);
criterion_main!(benches);
