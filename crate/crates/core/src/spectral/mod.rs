//! Spectral clustering of the affinity graph: normalized-Laplacian
//! embedding, row normalization, k-means.

mod cluster;
mod embed;

pub use cluster::{
    cluster_embedding, cluster_stats, format_stats, median, read_assignment, spectral_cluster, spectral_cluster_capped,
    stats_from_sizes,
    write_assignment, ClusterAssignment, ClusterStats, DEFAULT_RESTARTS,
};
pub use embed::{spectral_embed, SpectralEmbedding};
