//! Each stage timed on the global rayon pool and on a one-thread pool.
//! Build with `--no-default-features` to time the sequential code path
//! with rayon compiled out entirely.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use image::GrayImage;

use memegraph::affinity::{run_queries, sample_queries, AffinityConfig};
use memegraph::features::{extract_batch, ExtractConfig, FeatureSet};
use memegraph::index::{IndexConfig, OpqConfig, OpqIvfIndex};
use memegraph::kmeans::{kmeans, KMeansConfig};
use memegraph::par;
use memegraph::pipeline::index_features;
use memegraph::spectral::spectral_cluster;
use memegraph::synth::{generate_genre_corpus, surf_like_descriptors, GenreConfig};

const MODES: [(&str, Option<usize>); 2] = [("parallel", None), ("sequential", Some(1))];

fn in_mode<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(t) => par::with_threads(t, f),
        None => f(),
    }
}

fn corpus() -> Vec<(u32, GrayImage)> {
    generate_genre_corpus(&GenreConfig {
        genres: 4,
        per_genre: 6,
        seed: 3,
        ..GenreConfig::default()
    })
    .into_iter()
    .enumerate()
    .map(|(i, s)| (i as u32, s.image))
    .collect()
}

fn opq() -> OpqConfig {
    OpqConfig {
        iterations: 3,
        init_iterations: 3,
        ..OpqConfig::default()
    }
}

fn index_config() -> IndexConfig {
    IndexConfig {
        coarse_k: 128,
        coarse_iterations: 8,
        pq_sample: 8192,
        ..IndexConfig::default()
    }
}

fn built(images: &[(u32, GrayImage)]) -> (Vec<FeatureSet>, OpqIvfIndex) {
    let features = extract_batch(images, &ExtractConfig::default());
    let index = index_features(&features, &opq(), &index_config()).expect("index");
    (features, index)
}

fn stages(c: &mut Criterion) {
    let images = corpus();
    let (features, index) = built(&images);
    let plan = sample_queries(images.len(), 0.5, 1);
    let affinity = memegraph::affinity::affinity_from_results(
        images.len(),
        &run_queries(&index, &features, &plan, &AffinityConfig::default()),
    );
    let vectors: Vec<f32> = surf_like_descriptors(20_000, 64, 0.05, 9).into_iter().flatten().collect();

    let mut g = c.benchmark_group("stages");
    g.sample_size(10);
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::new("extract", name), |b| {
            b.iter(|| in_mode(threads, || extract_batch(&images, &ExtractConfig::default())))
        });
        g.bench_function(BenchmarkId::new("index", name), |b| {
            b.iter(|| in_mode(threads, || index_features(&features, &opq(), &index_config()).unwrap()))
        });
        g.bench_function(BenchmarkId::new("match", name), |b| {
            b.iter(|| in_mode(threads, || run_queries(&index, &features, &plan, &AffinityConfig::default())))
        });
        g.bench_function(BenchmarkId::new("kmeans", name), |b| {
            b.iter(|| in_mode(threads, || kmeans(&vectors, 64, &KMeansConfig::new(256, 1))))
        });
        g.bench_function(BenchmarkId::new("spectral", name), |b| {
            b.iter(|| in_mode(threads, || spectral_cluster(&affinity, 4, 8, 1).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
