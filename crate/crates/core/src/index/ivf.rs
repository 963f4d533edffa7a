//! Inverted-file index over OPQ-rotated descriptors with PQ-coded residuals.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::opq::{self, Code, OpqModel, CENTROIDS, DIM, SUBSPACES, SUB_DIM};
use crate::error::{Error, Result};
use crate::features::{Descriptor, FeatureSet};
use crate::kmeans::{self, KMeansConfig, Real};
use crate::par;

pub const DEFAULT_COARSE_K: usize = 2048;
pub const DEFAULT_KNN: usize = 5;
pub const DEFAULT_NPROBE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IvfEntry {
    pub image_id: u32,
    pub keypoint: u32,
    pub code: Code,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpqIvfIndex {
    /// Rotation from OPQ training; codebooks are fitted to coarse residuals.
    pub opq: OpqModel,
    /// `coarse_k × 64`, in the rotated space.
    pub coarse: Vec<f32>,
    pub lists: Vec<Vec<IvfEntry>>,
}

impl OpqIvfIndex {
    pub fn coarse_k(&self) -> usize {
        self.coarse.len() / DIM
    }

    pub fn total_entries(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    pub fn coarse_centroid(&self, c: usize) -> &[f32] {
        &self.coarse[c * DIM..(c + 1) * DIM]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexConfig {
    pub coarse_k: usize,
    pub coarse_iterations: usize,
    /// Coarse k-means trains on at most this many descriptors per centroid.
    pub coarse_sample_per_centroid: usize,
    pub pq_sample: usize,
    pub pq_iterations: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            coarse_k: DEFAULT_COARSE_K,
            coarse_iterations: 25,
            coarse_sample_per_centroid: 32,
            pq_sample: 65_536,
            pq_iterations: 20,
            seed: 0,
        }
    }
}

/// Uniform sample of at most `cap` descriptors from all feature sets, in
/// global order. Returns row-major vectors.
pub fn sample_descriptors(features: &[FeatureSet], cap: usize, seed: u64) -> Vec<f32> {
    let total: usize = features.iter().map(FeatureSet::len).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = if total <= cap {
        (0..total).collect()
    } else {
        index::sample(&mut rng, total, cap).into_vec()
    };
    picks.sort_unstable();
    let mut out = Vec::with_capacity(picks.len() * DIM);
    let mut it = picks.into_iter().peekable();
    let mut offset = 0;
    for fs in features {
        while let Some(&p) = it.peek() {
            if p >= offset + fs.len() {
                break;
            }
            out.extend_from_slice(&fs.descriptors[p - offset]);
            it.next();
        }
        offset += fs.len();
    }
    out
}

/// Chunks of `(image_id, keypoint_ordinal, descriptor)` in global order.
fn descriptor_chunks(features: &[FeatureSet], chunk: usize) -> Vec<Vec<(u32, u32, &Descriptor)>> {
    let mut chunks = Vec::new();
    let mut cur = Vec::with_capacity(chunk);
    for fs in features {
        for (k, d) in fs.descriptors.iter().enumerate() {
            cur.push((fs.image_id, k as u32, d));
            if cur.len() == chunk {
                chunks.push(std::mem::replace(&mut cur, Vec::with_capacity(chunk)));
            }
        }
    }
    if !cur.is_empty() {
        chunks.push(cur);
    }
    chunks
}

/// Builds the inverted file: rotate, assign to the nearest coarse centroid,
/// PQ-encode the residual, append to that centroid's list.
pub fn build_index(features: &[FeatureSet], opq: &OpqModel, config: &IndexConfig) -> Result<OpqIvfIndex> {
    let total: usize = features.iter().map(FeatureSet::len).sum();
    if total < config.coarse_k || config.coarse_k == 0 {
        return Err(Error::TooFewDescriptors {
            got: total,
            coarse_k: config.coarse_k,
        });
    }

    let coarse_cap = config.coarse_k.saturating_mul(config.coarse_sample_per_centroid).max(config.coarse_k);
    let coarse_sample = opq.rotate(&sample_descriptors(features, coarse_cap, config.seed));
    let coarse = kmeans::kmeans(
        &coarse_sample,
        DIM,
        &KMeansConfig {
            max_iter: config.coarse_iterations,
            ..KMeansConfig::new(config.coarse_k, config.seed.wrapping_add(1))
        },
    )
    .centroids;

    // Residual codebooks.
    let pq_sample = opq.rotate(&sample_descriptors(features, config.pq_sample, config.seed.wrapping_add(2)));
    let (labels, _) = kmeans::assign(&pq_sample, &coarse, DIM);
    let pq_residuals = residuals(&pq_sample, &labels, &coarse);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(3));
    let inits: Vec<Vec<f32>> = (0..SUBSPACES)
        .map(|s| {
            let sub = opq::subspace_columns(&pq_residuals, s);
            let k = CENTROIDS.min(sub.len() / SUB_DIM);
            let mut init = kmeans::kmeans_pp_init(&sub, SUB_DIM, k, &mut rng);
            // Fewer residuals than centroids: pad with copies.
            while init.len() < CENTROIDS * SUB_DIM {
                let j = init.len() / SUB_DIM % k;
                init.extend_from_within(j * SUB_DIM..(j + 1) * SUB_DIM);
            }
            init
        })
        .collect();
    let books = par::map_range(SUBSPACES, |s| {
        let sub = opq::subspace_columns(&pq_residuals, s);
        kmeans::lloyd(&sub, SUB_DIM, inits[s].clone(), config.pq_iterations, 1e-7).centroids
    });
    let model = OpqModel {
        rotation: opq.rotation.clone(),
        codebooks: books.concat(),
    };

    let mut lists = vec![Vec::new(); config.coarse_k];
    for chunk in descriptor_chunks(features, 32_768) {
        let raw: Vec<f32> = chunk.iter().flat_map(|(_, _, d)| d.iter().copied()).collect();
        let rotated = model.rotate(&raw);
        let (labels, _) = kmeans::assign(&rotated, &coarse, DIM);
        let codes = model.encode_rotated(&residuals(&rotated, &labels, &coarse));
        for (((image_id, keypoint, _), list), code) in chunk.iter().zip(labels).zip(codes) {
            lists[list as usize].push(IvfEntry {
                image_id: *image_id,
                keypoint: *keypoint,
                code,
            });
        }
    }

    Ok(OpqIvfIndex {
        opq: model,
        coarse,
        lists,
    })
}

fn residuals(rotated: &[f32], labels: &[u32], coarse: &[f32]) -> Vec<f32> {
    let mut out = rotated.to_vec();
    for (row, &l) in out.chunks_exact_mut(DIM).zip(labels) {
        let c = &coarse[l as usize * DIM..(l as usize + 1) * DIM];
        for (v, &cv) in row.iter_mut().zip(c) {
            *v -= cv;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorMatch {
    pub query_ordinal: u32,
    pub image_id: u32,
    pub keypoint: u32,
    /// Euclidean ADC distance.
    pub distance: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchParams {
    pub knn: usize,
    pub nprobe: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            knn: DEFAULT_KNN,
            nprobe: DEFAULT_NPROBE,
        }
    }
}

/// ADC lookup table for one rotated residual: `SUBSPACES × CENTROIDS`
/// squared distances.
pub fn adc_table(model: &OpqModel, residual: &[f32]) -> Vec<f32> {
    let mut table = vec![0f32; SUBSPACES * CENTROIDS];
    for s in 0..SUBSPACES {
        let q = &residual[s * SUB_DIM..(s + 1) * SUB_DIM];
        let book = model.codebook(s);
        for j in 0..CENTROIDS {
            let c = &book[j * SUB_DIM..(j + 1) * SUB_DIM];
            let mut acc = 0f32;
            for d in 0..SUB_DIM {
                let t = q[d] - c[d];
                acc += t * t;
            }
            table[s * CENTROIDS + j] = acc;
        }
    }
    table
}

#[inline]
pub fn adc_distance(table: &[f32], code: &Code) -> f32 {
    let mut acc = 0f32;
    for s in 0..SUBSPACES {
        acc += table[s * CENTROIDS + code[s] as usize];
    }
    acc
}

/// Bounded best-k list ordered by (distance, image_id, keypoint).
struct TopK {
    k: usize,
    items: Vec<(f32, u32, u32)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn worst(&self) -> f32 {
        if self.items.len() < self.k {
            f32::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    #[inline]
    fn push(&mut self, item: (f32, u32, u32)) {
        let key = |t: &(f32, u32, u32)| (t.0, t.1, t.2);
        if self.items.len() == self.k && key(&item) >= key(&self.items[self.k - 1]) {
            return;
        }
        let pos = self
            .items
            .partition_point(|x| key(x) <= key(&item));
        self.items.insert(pos, item);
        self.items.truncate(self.k);
    }
}

/// Approximate k-NN for each query row. Entries from `exclude_image` are
/// never returned.
pub fn search(
    index: &OpqIvfIndex,
    queries: &[Descriptor],
    params: SearchParams,
    exclude_image: Option<u32>,
) -> Vec<Vec<DescriptorMatch>> {
    assert!(params.knn >= 1, "knn must be at least 1");
    if index.total_entries() == 0 || queries.is_empty() {
        return vec![Vec::new(); queries.len()];
    }
    let k = index.coarse_k();
    let nprobe = params.nprobe.clamp(1, k);
    const BLOCK: usize = 128;

    let blocks = par::map_range(queries.len().div_ceil(BLOCK), |b| {
        let start = b * BLOCK;
        let rows = BLOCK.min(queries.len() - start);
        let raw: Vec<f32> = queries[start..start + rows].iter().flatten().copied().collect();
        let rotated = index.opq.rotate(&raw);
        let mut dots = vec![0f32; rows * k];
        f32::gemm_abt(rows, DIM, k, &rotated, &index.coarse, &mut dots);
        let c_norms: Vec<f32> = index.coarse.chunks_exact(DIM).map(|c| c.iter().map(|v| v * v).sum()).collect();

        let mut out = Vec::with_capacity(rows);
        let mut order: Vec<(f32, u32)> = Vec::with_capacity(k);
        let mut residual = [0f32; DIM];
        for r in 0..rows {
            let z = &rotated[r * DIM..(r + 1) * DIM];
            order.clear();
            order.extend((0..k).map(|c| (c_norms[c] - 2.0 * dots[r * k + c], c as u32)));
            let cmp = |a: &(f32, u32), b: &(f32, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if nprobe < k {
                order.select_nth_unstable_by(nprobe - 1, cmp);
                order.truncate(nprobe);
            }
            order.sort_unstable_by(cmp);

            let mut top = TopK::new(params.knn);
            for &(_, c) in &order {
                let list = &index.lists[c as usize];
                if list.is_empty() {
                    continue;
                }
                let cc = index.coarse_centroid(c as usize);
                for d in 0..DIM {
                    residual[d] = z[d] - cc[d];
                }
                let table = adc_table(&index.opq, &residual);
                for e in list {
                    if Some(e.image_id) == exclude_image {
                        continue;
                    }
                    let dist = adc_distance(&table, &e.code);
                    if dist <= top.worst() {
                        top.push((dist, e.image_id, e.keypoint));
                    }
                }
            }
            out.push(
                top.items
                    .into_iter()
                    .map(|(d, image_id, keypoint)| DescriptorMatch {
                        query_ordinal: (start + r) as u32,
                        image_id,
                        keypoint,
                        distance: d.max(0.0).sqrt(),
                    })
                    .collect(),
            );
        }
        out
    });
    blocks.into_iter().flatten().collect()
}
