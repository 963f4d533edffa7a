//! Results must not depend on how many worker threads run the pipeline.

use memegraph::par;
use memegraph::pipeline::{run, PipelineParams};
use memegraph::synth::{generate_genre_corpus, GenreConfig};

fn small_params() -> PipelineParams {
    let mut p = PipelineParams::new(4, 11);
    p.opq.iterations = 3;
    p.opq.init_iterations = 3;
    p.index.coarse_k = 64;
    p.index.coarse_iterations = 8;
    p.index.pq_sample = 8192;
    p.query_fraction = 0.5;
    p
}

#[test]
fn one_thread_and_four_threads_agree() {
    let corpus = generate_genre_corpus(&GenreConfig {
        genres: 4,
        per_genre: 6,
        seed: 5,
        ..GenreConfig::default()
    });
    let images: Vec<_> = corpus.into_iter().enumerate().map(|(i, s)| (i as u32, s.image)).collect();
    let params = small_params();
    let one = par::with_threads(1, || run(&images, &params)).unwrap();
    let four = par::with_threads(4, || run(&images, &params)).unwrap();

    assert_eq!(one.features, four.features);
    assert_eq!(one.index, four.index);
    assert_eq!(one.results, four.results);
    assert_eq!(one.affinity, four.affinity);
    assert_eq!(one.assignment, four.assignment);
    assert!(one.affinity.edge_count() > 0);
}
