//! Comparison graphs from whole-image descriptors: 64-bit perceptual hashes
//! and externally computed global embeddings.

mod embedding;
mod phash;

pub use embedding::{
    affinity_from_embeddings, read_embeddings, read_embeddings_file, write_embeddings, write_embeddings_file,
    GlobalEmbedding, EMBEDDING_MAGIC, EMBEDDING_VERSION,
};
pub use phash::{
    affinity_from_hashes, affinity_from_hashes_brute_force, hamming, phash64, read_hash_dump, write_hash_dump,
    PerceptualHash,
};

pub const DEFAULT_MAX_HAMMING: u32 = 10;
pub const DEFAULT_EMBEDDING_KNN: usize = 100;
