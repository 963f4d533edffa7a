use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::embed::{spectral_embed, SpectralEmbedding};
use crate::affinity::SparseAffinity;
use crate::error::{Error, Result};
use crate::kmeans::{self, KMeansConfig};

pub const DEFAULT_RESTARTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster per image id, in `0..=k`; `k` is the overflow cluster holding
    /// nodes without edges.
    pub assignments: Vec<u32>,
    pub k: usize,
    pub centroid_inertia: f64,
    /// Regular clusters that k-means left without members.
    pub empty_clusters: Vec<u32>,
}

impl ClusterAssignment {
    pub fn overflow(&self) -> u32 {
        self.k as u32
    }

    /// Member counts for clusters `0..=k`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0usize; self.k + 1];
        for &c in &self.assignments {
            s[c as usize] += 1;
        }
        s
    }

    /// Image ids per cluster `0..=k`, ascending.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut m = vec![Vec::new(); self.k + 1];
        for (id, &c) in self.assignments.iter().enumerate() {
            m[c as usize].push(id as u32);
        }
        m
    }
}

/// K-means on embedding rows; nodes outside the embedding go to the
/// overflow cluster.
pub fn cluster_embedding(
    emb: &SpectralEmbedding,
    n: usize,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    if k == 0 || k > emb.n_active {
        return Err(Error::EmbeddingTooLarge {
            k,
            n_active: emb.n_active,
        });
    }
    let run = kmeans::kmeans(
        &emb.coords,
        emb.k,
        &KMeansConfig {
            restarts,
            ..KMeansConfig::new(k, seed)
        },
    );
    let mut assignments = vec![k as u32; n];
    for (&id, &l) in emb.node_map.iter().zip(&run.labels) {
        assignments[id as usize] = l;
    }
    let mut counts = vec![0usize; k];
    for &l in &run.labels {
        counts[l as usize] += 1;
    }
    Ok(ClusterAssignment {
        assignments,
        k,
        centroid_inertia: run.inertia,
        empty_clusters: (0..k as u32).filter(|&c| counts[c as usize] == 0).collect(),
    })
}

/// Embedding with `k` eigenvectors followed by k-means into `k` clusters.
pub fn spectral_cluster(a: &SparseAffinity, k: usize, restarts: usize, seed: u64) -> Result<ClusterAssignment> {
    let emb = spectral_embed(a, k)?;
    cluster_embedding(&emb, a.n, k, restarts, seed)
}

/// Like [`spectral_cluster`], but a graph with fewer than `k` active nodes
/// is clustered into as many clusters as it has active nodes instead of
/// failing; the unused ids are reported empty and the overflow id stays `k`.
/// Used for baseline graphs, which can be nearly edgeless.
pub fn spectral_cluster_capped(a: &SparseAffinity, k: usize, restarts: usize, seed: u64) -> Result<ClusterAssignment> {
    let n_active = a.active_nodes().len();
    if n_active >= k {
        return spectral_cluster(a, k, restarts, seed);
    }
    if n_active == 0 {
        return Ok(ClusterAssignment {
            assignments: vec![k as u32; a.n],
            k,
            centroid_inertia: 0.0,
            empty_clusters: (0..k as u32).collect(),
        });
    }
    let mut c = spectral_cluster(a, n_active, restarts, seed)?;
    for l in &mut c.assignments {
        if *l as usize == n_active {
            *l = k as u32;
        }
    }
    c.empty_clusters.extend(n_active as u32..k as u32);
    c.k = k;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    /// Sizes of the non-empty regular clusters, by cluster id.
    pub sizes: Vec<usize>,
    pub min: usize,
    pub median: f64,
    pub max: usize,
    pub overflow: usize,
    pub empty: usize,
    /// `(lo, hi, count)`: clusters with `lo ≤ size < hi`, power-of-two bins.
    pub histogram: Vec<(usize, usize, usize)>,
}

/// Median with the mean of the middle two for even counts.
pub fn median(values: &[usize]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_unstable();
    let h = v.len() / 2;
    if v.len() % 2 == 1 {
        v[h] as f64
    } else {
        (v[h - 1] + v[h]) as f64 / 2.0
    }
}

pub fn stats_from_sizes(sizes: &[usize], overflow: usize) -> ClusterStats {
    let nonempty: Vec<usize> = sizes.iter().copied().filter(|&s| s > 0).collect();
    let empty = sizes.len() - nonempty.len();
    if nonempty.is_empty() {
        return ClusterStats {
            sizes: nonempty,
            min: 0,
            median: 0.0,
            max: 0,
            overflow,
            empty,
            histogram: Vec::new(),
        };
    }
    let max = *nonempty.iter().max().unwrap();
    let mut histogram = Vec::new();
    let mut lo = 1;
    while lo <= max {
        let hi = lo * 2;
        histogram.push((lo, hi, nonempty.iter().filter(|&&s| s >= lo && s < hi).count()));
        lo = hi;
    }
    ClusterStats {
        min: *nonempty.iter().min().unwrap(),
        median: median(&nonempty),
        max,
        sizes: nonempty,
        overflow,
        empty,
        histogram,
    }
}

/// Statistics over regular clusters; the overflow size is reported apart.
pub fn cluster_stats(assignment: &ClusterAssignment) -> ClusterStats {
    let sizes = assignment.sizes();
    stats_from_sizes(&sizes[..assignment.k], sizes[assignment.k])
}

pub fn format_stats(stats: &ClusterStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "clusters\t{}", stats.sizes.len());
    let _ = writeln!(s, "empty_clusters\t{}", stats.empty);
    let _ = writeln!(s, "overflow_size\t{}", stats.overflow);
    let _ = writeln!(s, "min_size\t{}", stats.min);
    let _ = writeln!(s, "median_size\t{}", stats.median);
    let _ = writeln!(s, "max_size\t{}", stats.max);
    let _ = writeln!(s, "histogram");
    for (lo, hi, c) in &stats.histogram {
        let _ = writeln!(s, "  [{lo}, {hi})\t{c}");
    }
    s
}

/// CSV `image_id,cluster_id`. The header carries K so the overflow id is
/// recoverable.
pub fn write_assignment(path: &Path, a: &ClusterAssignment) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# k={} inertia={}", a.k, a.centroid_inertia)?;
    writeln!(out, "image_id,cluster_id")?;
    for (id, c) in a.assignments.iter().enumerate() {
        writeln!(out, "{id},{c}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_assignment(path: &Path) -> Result<ClusterAssignment> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::format("assignment", m);
    let mut k = None;
    let mut inertia = 0.0;
    let mut assignments = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if let Some(meta) = line.strip_prefix('#') {
            for kv in meta.split_whitespace() {
                match kv.split_once('=') {
                    Some(("k", v)) => k = Some(v.parse::<usize>().map_err(|e| bad(format!("k: {e}")))?),
                    Some(("inertia", v)) => inertia = v.parse().map_err(|e| bad(format!("inertia: {e}")))?,
                    _ => {}
                }
            }
            continue;
        }
        if line.trim().is_empty() || line.starts_with("image_id") {
            continue;
        }
        let (id, c) = line.split_once(',').ok_or_else(|| bad(format!("line {}: {line:?}", n + 1)))?;
        let id: usize = id.trim().parse().map_err(|_| bad(format!("line {}: bad id", n + 1)))?;
        let c: u32 = c.trim().parse().map_err(|_| bad(format!("line {}: bad cluster", n + 1)))?;
        if id != assignments.len() {
            return Err(bad(format!("line {}: expected image id {}", n + 1, assignments.len())));
        }
        assignments.push(c);
    }
    let k = k.ok_or_else(|| bad("missing k header".into()))?;
    if let Some(c) = assignments.iter().find(|&&c| c as usize > k) {
        return Err(bad(format!("cluster id {c} exceeds k = {k}")));
    }
    let mut counts = vec![0usize; k + 1];
    for &c in &assignments {
        counts[c as usize] += 1;
    }
    Ok(ClusterAssignment {
        assignments,
        k,
        centroid_inertia: inertia,
        empty_clusters: (0..k as u32).filter(|&c| counts[c as usize] == 0).collect(),
    })
}
