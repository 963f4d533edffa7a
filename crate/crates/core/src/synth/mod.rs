//! Synthetic data: genre image corpora, near-duplicate transforms and
//! descriptor-like vectors for exercising the index.

pub mod draw;
mod genre;
mod vectors;

pub use genre::{
    generate_genre_corpus, near_duplicate, noise_image, object_patch, text_overlay, write_corpus, GenreConfig,
    NearDuplicateConfig, SyntheticImage,
};
pub use vectors::{perturb_descriptor, surf_like_descriptors};
