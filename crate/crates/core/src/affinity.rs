//! Sampled query matching and the sparse affinity graph.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::index::{search, OpqIvfIndex, SearchParams};
use crate::matcher::{collect_candidates, score_images, ImageScore, RansacConfig, DEFAULT_J};
use crate::par;

/// Symmetric, non-negative graph stored as upper-triangle triplets sorted
/// by `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinity {
    pub n: usize,
    pub edges: Vec<(u32, u32, f64)>,
}

impl SparseAffinity {
    pub fn empty(n: usize) -> Self {
        SparseAffinity { n, edges: Vec::new() }
    }

    /// Builds a graph from directed or undirected weights. Self-loops and
    /// non-positive weights are dropped; duplicate pairs keep the maximum.
    pub fn from_weights(n: usize, weights: impl IntoIterator<Item = (u32, u32, f64)>) -> Self {
        let mut map: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for (a, b, w) in weights {
            assert!((a as usize) < n && (b as usize) < n, "edge ({a}, {b}) out of range for n = {n}");
            if a == b || !(w > 0.0) {
                continue;
            }
            let key = (a.min(b), a.max(b));
            let slot = map.entry(key).or_insert(w);
            if w > *slot {
                *slot = w;
            }
        }
        SparseAffinity {
            n,
            edges: map.into_iter().map(|((i, j), w)| (i, j, w)).collect(),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0f64; self.n];
        for &(i, j, w) in &self.edges {
            d[i as usize] += w;
            d[j as usize] += w;
        }
        d
    }

    /// Number of incident edges per node.
    pub fn edge_degrees(&self) -> Vec<u32> {
        let mut d = vec![0u32; self.n];
        for &(i, j, _) in &self.edges {
            d[i as usize] += 1;
            d[j as usize] += 1;
        }
        d
    }

    /// Nodes with at least one edge, ascending.
    pub fn active_nodes(&self) -> Vec<u32> {
        self.edge_degrees()
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn max_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).fold(0.0, f64::max)
    }

    /// Checks the stored-triplet invariants.
    pub fn validate(&self) -> Result<()> {
        for w in self.edges.windows(2) {
            if (w[0].0, w[0].1) >= (w[1].0, w[1].1) {
                return Err(Error::InvalidArgument(format!(
                    "edges not strictly sorted at ({}, {})",
                    w[1].0, w[1].1
                )));
            }
        }
        for &(i, j, w) in &self.edges {
            if i >= j || j as usize >= self.n || !(w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid edge ({i}, {j}, {w})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub query_ids: Vec<u32>,
    pub fraction: f64,
    pub seed: u64,
}

/// `round(fraction · n)` ids clamped to `[1, n]`, drawn without replacement
/// and sorted.
pub fn sample_queries(n: usize, fraction: f64, seed: u64) -> QueryPlan {
    assert!(n >= 1, "cannot sample queries from an empty corpus");
    assert!(fraction > 0.0 && fraction <= 1.0, "query fraction must lie in (0, 1]");
    let count = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut query_ids: Vec<u32> = index::sample(&mut rng, n, count).into_iter().map(|i| i as u32).collect();
    query_ids.sort_unstable();
    QueryPlan {
        query_ids,
        fraction,
        seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityConfig {
    pub j: usize,
    pub search: SearchParams,
    pub ransac: RansacConfig,
    pub seed: u64,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        AffinityConfig {
            j: DEFAULT_J,
            search: SearchParams::default(),
            ransac: RansacConfig::default(),
            seed: 0,
        }
    }
}

/// Verified matches for one query image.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query_id: u32,
    pub scores: Vec<ImageScore>,
}

/// Searches, collects and verifies one query against the index.
pub fn match_query(index: &OpqIvfIndex, features: &[FeatureSet], query_id: u32, config: &AffinityConfig) -> QueryResult {
    let query = &features[query_id as usize];
    let raw = search(index, &query.descriptors, config.search, Some(query_id));
    let candidates = collect_candidates(query, &raw, features);
    QueryResult {
        query_id,
        scores: score_images(query_id, &candidates, config.j, &config.ransac, config.seed),
    }
}

/// Runs every planned query. Queries without stored features are skipped
/// with a warning.
pub fn run_queries(
    index: &OpqIvfIndex,
    features: &[FeatureSet],
    plan: &QueryPlan,
    config: &AffinityConfig,
) -> Vec<QueryResult> {
    assert!(
        features.iter().enumerate().all(|(i, f)| f.image_id as usize == i),
        "feature sets must be indexed by image id"
    );
    let ids: Vec<u32> = plan
        .query_ids
        .iter()
        .copied()
        .filter(|&q| {
            let present = (q as usize) < features.len();
            if !present {
                log::warn!("no stored features for query image {q}; skipped");
            }
            present
        })
        .collect();
    par::map(&ids, |&q| match_query(index, features, q, config))
}

/// Turns per-query scores into a symmetric graph (max of both directions).
pub fn affinity_from_results(n: usize, results: &[QueryResult]) -> SparseAffinity {
    SparseAffinity::from_weights(
        n,
        results
            .iter()
            .flat_map(|r| r.scores.iter().map(move |s| (r.query_id, s.image_id, s.score as f64))),
    )
}

pub fn build_affinity(
    index: &OpqIvfIndex,
    features: &[FeatureSet],
    plan: &QueryPlan,
    config: &AffinityConfig,
) -> SparseAffinity {
    affinity_from_results(features.len(), &run_queries(index, features, plan, config))
}

/// Union-find labels: `labels[v]` is the smallest node id in v's component.
pub fn component_labels(a: &SparseAffinity) -> Vec<u32> {
    let mut parent: Vec<u32> = (0..a.n as u32).collect();
    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            let up = parent[parent[x as usize] as usize];
            parent[x as usize] = up;
            x = up;
        }
        x
    }
    for &(i, j, _) in &a.edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj) as usize] = ri.min(rj);
        }
    }
    (0..a.n as u32).map(|v| find(&mut parent, v)).collect()
}

/// Component sizes, descending. Isolated nodes count as size-1 components.
pub fn connected_components(a: &SparseAffinity) -> Vec<usize> {
    let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
    for l in component_labels(a) {
        *sizes.entry(l).or_default() += 1;
    }
    let mut out: Vec<usize> = sizes.into_values().collect();
    out.sort_unstable_by(|a, b| b.cmp(a));
    out
}

/// Fraction of nodes with at least one edge that fall in the largest
/// component. `None` for an edgeless graph.
pub fn largest_component_coverage(a: &SparseAffinity) -> Option<f64> {
    let active = a.active_nodes();
    if active.is_empty() {
        return None;
    }
    let labels = component_labels(a);
    let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
    for &v in &active {
        *sizes.entry(labels[v as usize]).or_default() += 1;
    }
    Some(*sizes.values().max().unwrap() as f64 / active.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffinityHeader {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub j: usize,
}

/// Writes `n m seed J` then one `i j weight` line per edge, tab-separated.
pub fn write_affinity(path: &Path, a: &SparseAffinity, seed: u64, j: usize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}\t{}\t{}\t{}", a.n, a.edges.len(), seed, j)?;
    for &(i, j, w) in &a.edges {
        writeln!(out, "{i}\t{j}\t{w}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_affinity(path: &Path) -> Result<(SparseAffinity, AffinityHeader)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |m: String| Error::format("affinity", m);
    let header = lines.next().ok_or_else(|| bad("missing header".into()))??;
    let f: Vec<&str> = header.split_whitespace().collect();
    let parse = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("header field {s:?}: {e}")));
    if f.len() != 4 {
        return Err(bad(format!("header has {} fields, expected 4", f.len())));
    }
    let header = AffinityHeader {
        n: parse(f[0])? as usize,
        m: parse(f[1])? as usize,
        seed: parse(f[2])?,
        j: parse(f[3])? as usize,
    };
    let mut edges = Vec::with_capacity(header.m);
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let row = || bad(format!("line {}: {line:?}", k + 2));
        if f.len() != 3 {
            return Err(row());
        }
        let i = f[0].parse::<u32>().map_err(|_| row())?;
        let j = f[1].parse::<u32>().map_err(|_| row())?;
        let w = f[2].parse::<f64>().map_err(|_| row())?;
        edges.push((i, j, w));
    }
    if edges.len() != header.m {
        return Err(bad(format!("header promises {} edges, found {}", header.m, edges.len())));
    }
    let a = SparseAffinity { n: header.n, edges };
    a.validate()?;
    Ok((a, header))
}
