//! Seeded k-means with k-means++ initialisation.
//!
//! Shared by the coarse quantizer, the product-quantizer codebooks and the
//! spectral clustering step. Distances are computed block-wise through a
//! GEMM (`‖x‖² − 2x·c + ‖c‖²`), then the winning distance is recomputed
//! directly so reported errors are exact. Every reduction runs sequentially
//! over per-block results, so labels and centroids do not depend on the
//! thread count.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::par;

pub trait Real: Float + Send + Sync + std::fmt::Debug + 'static {
    /// `c = a · bᵀ` for row-major `a` (m×d) and `b` (n×d).
    fn gemm_abt(m: usize, d: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);
}

impl Real for f32 {
    fn gemm_abt(m: usize, d: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        assert!(a.len() >= m * d && b.len() >= n * d && c.len() >= m * n);
        // SAFETY: bounds asserted above; strides describe row-major a, bᵀ, c.
        unsafe {
            matrixmultiply::sgemm(
                m, d, n, 1.0,
                a.as_ptr(), d as isize, 1,
                b.as_ptr(), 1, d as isize,
                0.0,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

impl Real for f64 {
    fn gemm_abt(m: usize, d: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        assert!(a.len() >= m * d && b.len() >= n * d && c.len() >= m * n);
        // SAFETY: as above.
        unsafe {
            matrixmultiply::dgemm(
                m, d, n, 1.0,
                a.as_ptr(), d as isize, 1,
                b.as_ptr(), 1, d as isize,
                0.0,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

const BLOCK_ROWS: usize = 256;

#[inline]
pub fn sq_dist<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| {
            let d = x - y;
            acc + d * d
        })
        .to_f64()
        .unwrap()
}

fn row_norms<T: Real>(data: &[T], dim: usize) -> Vec<T> {
    data.chunks_exact(dim)
        .map(|r| r.iter().fold(T::zero(), |acc, &v| acc + v * v))
        .collect()
}

/// Nearest centroid per row of `data` and the exact squared distance to it.
/// Ties resolve to the lower centroid index.
pub fn assign<T: Real>(data: &[T], centroids: &[T], dim: usize) -> (Vec<u32>, Vec<f64>) {
    let n = data.len() / dim;
    let k = centroids.len() / dim;
    assert!(k > 0, "no centroids");
    let c_norms = row_norms(centroids, dim);
    let blocks = n.div_ceil(BLOCK_ROWS);
    let per_block = par::map_range(blocks, |b| {
        let start = b * BLOCK_ROWS;
        let rows = BLOCK_ROWS.min(n - start);
        let x = &data[start * dim..(start + rows) * dim];
        let mut dots = vec![T::zero(); rows * k];
        T::gemm_abt(rows, dim, k, x, centroids, &mut dots);
        let two = T::one() + T::one();
        let mut labels = Vec::with_capacity(rows);
        let mut dists = Vec::with_capacity(rows);
        for r in 0..rows {
            let drow = &dots[r * k..(r + 1) * k];
            let mut best = 0usize;
            let mut best_v = T::infinity();
            for (j, (&dot, &cn)) in drow.iter().zip(&c_norms).enumerate() {
                let v = cn - two * dot;
                if v < best_v {
                    best_v = v;
                    best = j;
                }
            }
            labels.push(best as u32);
            dists.push(sq_dist(&x[r * dim..(r + 1) * dim], &centroids[best * dim..(best + 1) * dim]));
        }
        (labels, dists)
    });
    let mut labels = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    for (l, d) in per_block {
        labels.extend(l);
        dists.extend(d);
    }
    (labels, dists)
}

/// k-means++ seeding. Returns `k` centroids (row-major). When every
/// remaining point coincides with a chosen centre the next centre is drawn
/// uniformly.
pub fn kmeans_pp_init<T: Real>(data: &[T], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<T> {
    let n = data.len() / dim;
    assert!(n >= 1 && k >= 1);
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut min_d: Vec<f64> = par::map_range(n, |i| sq_dist(row(i), row(first)));

    for _ in 1..k {
        let total: f64 = min_d.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in min_d.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                target -= d;
                if target < 0.0 {
                    pick = i;
                    break;
                }
            }
            // Guard against rounding landing on a zero-weight tail point.
            if min_d[pick] <= 0.0 {
                pick = min_d.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = row(next).to_vec();
        let updated = par::map_range(n, |i| sq_dist(row(i), &c).min(min_d[i]));
        min_d = updated;
        centroids.extend_from_slice(&c);
    }
    centroids
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            max_iter: 300,
            tol: 1e-7,
            restarts: 1,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T> {
    pub centroids: Vec<T>,
    pub labels: Vec<u32>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia of every assignment step, in order.
    pub inertia_history: Vec<f64>,
    /// Clusters left without members after the final assignment.
    pub empty_clusters: usize,
}

/// Lloyd iterations from the given initial centroids.
pub fn lloyd<T: Real>(data: &[T], dim: usize, mut centroids: Vec<T>, max_iter: usize, tol: f64) -> KMeansResult<T> {
    let k = centroids.len() / dim;
    let mut history = Vec::new();
    let mut iterations = 0;
    let (mut labels, mut dists) = assign(data, &centroids, dim);
    history.push(dists.iter().sum());
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (row, &l) in data.chunks_exact(dim).zip(&labels) {
            let l = l as usize;
            counts[l] += 1;
            for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(row) {
                *s += v.to_f64().unwrap();
            }
        }
        let mut shift = 0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut moved = 0f64;
            for d in 0..dim {
                let new = T::from(sums[c * dim + d] * inv).unwrap();
                let delta = (new - centroids[c * dim + d]).to_f64().unwrap();
                moved += delta * delta;
                centroids[c * dim + d] = new;
            }
            shift = shift.max(moved.sqrt());
        }
        (labels, dists) = assign(data, &centroids, dim);
        history.push(dists.iter().sum());
        if shift < tol {
            break;
        }
    }
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l as usize] += 1;
    }
    KMeansResult {
        centroids,
        labels,
        inertia: *history.last().unwrap(),
        iterations,
        inertia_history: history,
        empty_clusters: counts.iter().filter(|&&c| c == 0).count(),
    }
}

/// Best-of-`restarts` k-means. Requires at least `k` rows.
pub fn kmeans<T: Real>(data: &[T], dim: usize, config: &KMeansConfig) -> KMeansResult<T> {
    let n = data.len() / dim;
    assert!(config.k >= 1 && config.k <= n, "k = {} with {n} points", config.k);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<KMeansResult<T>> = None;
    for _ in 0..config.restarts.max(1) {
        let init = kmeans_pp_init(data, dim, config.k, &mut rng);
        let run = lloyd(data, dim, init, config.max_iter, config.tol);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.unwrap()
}
