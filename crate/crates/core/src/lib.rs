//! Genre discovery for image corpora.
//!
//! The pipeline indexes local SURF features in an IVF-OPQ index, samples
//! query images to build a sparse affinity graph from geometrically
//! verified matches, and partitions that graph with normalized spectral
//! clustering. Perceptual-hash and global-embedding baselines produce
//! affinity graphs of the same shape, and the `eval` module implements
//! the impostor-host validation protocol.

pub mod affinity;
pub mod baselines;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod index;
pub mod kmeans;
pub mod matcher;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
