//! The whole pipeline over images already in memory: extract, index,
//! sample queries, match, cluster.

use std::time::{Duration, Instant};

use image::GrayImage;

use crate::affinity::{affinity_from_results, run_queries, sample_queries, AffinityConfig, QueryPlan, QueryResult, SparseAffinity};
use crate::error::Result;
use crate::features::{extract_batch, ExtractConfig, FeatureSet};
use crate::index::{sample_descriptors, train_opq, build_index, IndexConfig, OpqConfig, OpqIvfIndex};
use crate::spectral::{spectral_cluster, ClusterAssignment, DEFAULT_RESTARTS};

pub const DEFAULT_QUERY_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub extract: ExtractConfig,
    pub opq: OpqConfig,
    pub index: IndexConfig,
    pub query_fraction: f64,
    pub affinity: AffinityConfig,
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl PipelineParams {
    /// Defaults with every stage seeded from `seed`.
    pub fn new(k: usize, seed: u64) -> Self {
        PipelineParams {
            extract: ExtractConfig::default(),
            opq: OpqConfig {
                seed,
                ..OpqConfig::default()
            },
            index: IndexConfig {
                seed,
                ..IndexConfig::default()
            },
            query_fraction: DEFAULT_QUERY_FRACTION,
            affinity: AffinityConfig {
                seed,
                ..AffinityConfig::default()
            },
            k,
            restarts: DEFAULT_RESTARTS,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub extract: Duration,
    pub index: Duration,
    pub affinity: Duration,
    pub cluster: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.extract + self.index + self.affinity + self.cluster
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub features: Vec<FeatureSet>,
    pub index: OpqIvfIndex,
    pub plan: QueryPlan,
    pub results: Vec<QueryResult>,
    pub affinity: SparseAffinity,
    pub assignment: ClusterAssignment,
    pub timings: StageTimings,
}

/// Trains OPQ on a corpus sample and builds the inverted file.
pub fn index_features(features: &[FeatureSet], opq: &OpqConfig, config: &IndexConfig) -> Result<OpqIvfIndex> {
    let sample = sample_descriptors(features, config.pq_sample, opq.seed);
    let trained = train_opq(&sample, opq)?;
    build_index(features, &trained.model, config)
}

/// Images must carry ids `0..n` in order.
pub fn run(images: &[(u32, GrayImage)], params: &PipelineParams) -> Result<PipelineOutput> {
    assert!(
        images.iter().enumerate().all(|(i, (id, _))| *id as usize == i),
        "images must be numbered 0..n in order"
    );
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let features = extract_batch(images, &params.extract);
    timings.extract = t.elapsed();

    let t = Instant::now();
    let index = index_features(&features, &params.opq, &params.index)?;
    timings.index = t.elapsed();

    let t = Instant::now();
    let plan = sample_queries(images.len(), params.query_fraction, params.seed);
    let results = run_queries(&index, &features, &plan, &params.affinity);
    let affinity = affinity_from_results(images.len(), &results);
    timings.affinity = t.elapsed();

    let t = Instant::now();
    let assignment = spectral_cluster(&affinity, params.k, params.restarts, params.seed)?;
    timings.cluster = t.elapsed();

    Ok(PipelineOutput {
        features,
        index,
        plan,
        results,
        affinity,
        assignment,
        timings,
    })
}
