//! Runs the pipeline on a generated genre corpus and prints cluster
//! quality against the known genres.
//!
//! cargo run --release -p memegraph --example synthetic_genres -- [genres] [per_genre] [seed]

use memegraph::affinity::{connected_components, largest_component_coverage};
use memegraph::metrics::{adjusted_rand_index, purity};
use memegraph::pipeline::{run, PipelineParams};
use memegraph::synth::{generate_genre_corpus, GenreConfig};

fn main() -> memegraph::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let cfg = GenreConfig {
        genres: args.first().copied().unwrap_or(20),
        per_genre: args.get(1).copied().unwrap_or(25),
        seed: args.get(2).copied().unwrap_or(1) as u64,
        ..GenreConfig::default()
    };
    let corpus = generate_genre_corpus(&cfg);
    let truth: Vec<u32> = corpus.iter().map(|s| s.genre).collect();
    let images: Vec<_> = corpus.into_iter().enumerate().map(|(i, s)| (i as u32, s.image)).collect();

    let out = run(&images, &PipelineParams::new(cfg.genres, cfg.seed))?;
    let n_feat: usize = out.features.iter().map(|f| f.len()).sum();
    println!("images {}  descriptors {}  ({:.0}/image)", images.len(), n_feat, n_feat as f64 / images.len() as f64);
    println!("edges {}  active {}", out.affinity.edge_count(), out.affinity.active_nodes().len());
    println!("components (top 5) {:?}", &connected_components(&out.affinity)[..5.min(images.len())]);
    println!("largest component coverage {:?}", largest_component_coverage(&out.affinity));
    println!("purity {:.3}  ARI {:.3}", purity(&out.assignment.assignments, &truth), adjusted_rand_index(&out.assignment.assignments, &truth));
    println!("sizes {:?}", out.assignment.sizes());
    println!("timings {:?}", out.timings);
    let mut intra = 0;
    let mut inter = 0;
    for &(i, j, _) in &out.affinity.edges {
        if truth[i as usize] == truth[j as usize] { intra += 1 } else { inter += 1 }
    }
    println!("intra-genre edges {intra}  inter-genre edges {inter}");
    Ok(())
}
