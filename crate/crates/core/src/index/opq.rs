//! Optimized product quantization: a learned orthonormal rotation followed
//! by per-subspace codebooks.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::DESCRIPTOR_LEN;
use crate::kmeans::{self, Real};
use crate::par;

pub const DIM: usize = DESCRIPTOR_LEN;
pub const SUBSPACES: usize = 8;
pub const SUB_DIM: usize = DIM / SUBSPACES;
pub const CENTROIDS: usize = 256;

pub type Code = [u8; SUBSPACES];

#[derive(Debug, Clone, PartialEq)]
pub struct OpqModel {
    /// 64×64 row-major; vectors are rotated as `x · R`.
    pub rotation: Vec<f32>,
    /// `SUBSPACES × CENTROIDS × SUB_DIM`, row-major.
    pub codebooks: Vec<f32>,
}

impl OpqModel {
    pub fn identity_rotation() -> Vec<f32> {
        let mut r = vec![0f32; DIM * DIM];
        for i in 0..DIM {
            r[i * DIM + i] = 1.0;
        }
        r
    }

    pub fn codebook(&self, s: usize) -> &[f32] {
        &self.codebooks[s * CENTROIDS * SUB_DIM..(s + 1) * CENTROIDS * SUB_DIM]
    }

    pub fn centroid(&self, s: usize, j: usize) -> &[f32] {
        let base = (s * CENTROIDS + j) * SUB_DIM;
        &self.codebooks[base..base + SUB_DIM]
    }

    /// Rotates row-major `rows × 64` vectors.
    pub fn rotate(&self, rows: &[f32]) -> Vec<f32> {
        rotate(rows, &self.rotation)
    }

    /// PQ codes for already-rotated vectors.
    pub fn encode_rotated(&self, rotated: &[f32]) -> Vec<Code> {
        let n = rotated.len() / DIM;
        let per_sub: Vec<Vec<u32>> = par::map_range(SUBSPACES, |s| {
            let sub = subspace_columns(rotated, s);
            kmeans::assign(&sub, self.codebook(s), SUB_DIM).0
        });
        (0..n)
            .map(|i| std::array::from_fn(|s| per_sub[s][i] as u8))
            .collect()
    }

    /// Reconstruction of a code in the rotated space.
    pub fn decode(&self, code: &Code) -> [f32; DIM] {
        let mut out = [0f32; DIM];
        for s in 0..SUBSPACES {
            out[s * SUB_DIM..(s + 1) * SUB_DIM].copy_from_slice(self.centroid(s, code[s] as usize));
        }
        out
    }

    /// `max |RᵀR − I|` over all entries.
    pub fn orthonormality_error(&self) -> f64 {
        let r = DMatrix::from_row_slice(DIM, DIM, &self.rotation).map(|v| v as f64);
        let g = r.transpose() * &r;
        let mut worst = 0f64;
        for i in 0..DIM {
            for j in 0..DIM {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }
}

pub(crate) fn rotate(rows: &[f32], rotation: &[f32]) -> Vec<f32> {
    let n = rows.len() / DIM;
    let mut out = vec![0f32; rows.len()];
    // x·R = x·(Rᵀ)ᵀ; gemm_abt wants the right operand row-major as Rᵀ.
    let rt = transpose(rotation);
    par::for_each_chunk_mut(&mut out, 1024 * DIM, |ci, chunk| {
        let m = chunk.len() / DIM;
        let start = ci * 1024;
        f32::gemm_abt(m, DIM, DIM, &rows[start * DIM..(start + m) * DIM], &rt, chunk);
    });
    debug_assert_eq!(out.len(), n * DIM);
    out
}

fn transpose(m: &[f32]) -> Vec<f32> {
    let mut t = vec![0f32; DIM * DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            t[j * DIM + i] = m[i * DIM + j];
        }
    }
    t
}

/// Contiguous copy of subspace `s` of row-major 64-d vectors.
pub(crate) fn subspace_columns(rows: &[f32], s: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows.len() / SUBSPACES);
    for row in rows.chunks_exact(DIM) {
        out.extend_from_slice(&row[s * SUB_DIM..(s + 1) * SUB_DIM]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpqConfig {
    pub iterations: usize,
    /// Lloyd iterations used to seed the codebooks before alternation.
    pub init_iterations: usize,
    pub seed: u64,
    /// When false the rotation stays at identity (plain PQ).
    pub learn_rotation: bool,
}

impl Default for OpqConfig {
    fn default() -> Self {
        OpqConfig {
            iterations: 20,
            init_iterations: 10,
            seed: 0,
            learn_rotation: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedOpq {
    pub model: OpqModel,
    /// Mean squared reconstruction error after initialisation and after
    /// every alternation round.
    pub error_history: Vec<f64>,
}

impl TrainedOpq {
    pub fn final_error(&self) -> f64 {
        *self.error_history.last().unwrap()
    }
}

/// Trains codebooks (and, unless disabled, the rotation) on `sample`
/// (`M × 64`, row-major) by alternating Lloyd updates with an orthogonal
/// Procrustes step.
pub fn train_opq(sample: &[f32], config: &OpqConfig) -> Result<TrainedOpq> {
    let m = sample.len() / DIM;
    if m < CENTROIDS {
        return Err(Error::InsufficientTraining {
            got: m,
            need: CENTROIDS,
        });
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("training sample contains non-finite values".into()));
    }

    let mut rotation = OpqModel::identity_rotation();
    let mut rotated = sample.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let inits: Vec<Vec<f32>> = (0..SUBSPACES)
        .map(|s| kmeans::kmeans_pp_init(&subspace_columns(&rotated, s), SUB_DIM, CENTROIDS, &mut rng))
        .collect();

    let mut books: Vec<Vec<f32>> = Vec::with_capacity(SUBSPACES);
    let mut codes: Vec<Vec<u32>> = Vec::with_capacity(SUBSPACES);
    let mut err = 0.0;
    let runs = par::map_range(SUBSPACES, |s| {
        kmeans::lloyd(&subspace_columns(&rotated, s), SUB_DIM, inits[s].clone(), config.init_iterations, 0.0)
    });
    for run in runs {
        err += run.inertia;
        books.push(run.centroids);
        codes.push(run.labels);
    }
    let mut history = vec![err / m as f64];

    for _ in 0..config.iterations {
        if config.learn_rotation {
            let recon = reconstruct(&books, &codes, m);
            rotation = procrustes(sample, &recon);
            rotated = rotate(sample, &rotation);
        }
        let runs = par::map_range(SUBSPACES, |s| {
            kmeans::lloyd(&subspace_columns(&rotated, s), SUB_DIM, books[s].clone(), 1, 0.0)
        });
        err = 0.0;
        for (s, run) in runs.into_iter().enumerate() {
            err += run.inertia;
            books[s] = run.centroids;
            codes[s] = run.labels;
        }
        history.push(err / m as f64);
    }

    Ok(TrainedOpq {
        model: OpqModel {
            rotation,
            codebooks: books.concat(),
        },
        error_history: history,
    })
}

fn reconstruct(books: &[Vec<f32>], codes: &[Vec<u32>], m: usize) -> Vec<f32> {
    let mut out = vec![0f32; m * DIM];
    for (i, row) in out.chunks_exact_mut(DIM).enumerate() {
        for s in 0..SUBSPACES {
            let j = codes[s][i] as usize;
            row[s * SUB_DIM..(s + 1) * SUB_DIM].copy_from_slice(&books[s][j * SUB_DIM..(j + 1) * SUB_DIM]);
        }
    }
    out
}

/// Orthogonal `R` minimising `‖X·R − Y‖_F`: `R = U·Vᵀ` for `XᵀY = U·Σ·Vᵀ`.
fn procrustes(x: &[f32], y: &[f32]) -> Vec<f32> {
    const BLOCK: usize = 4096;
    let m = x.len() / DIM;
    let partials = par::map_range(m.div_ceil(BLOCK), |b| {
        let start = b * BLOCK;
        let rows = BLOCK.min(m - start);
        // Transposed copies so the product is Xᵀ·Y = (Xᵀ)·(Yᵀ)ᵀ.
        let mut xt = vec![0f64; DIM * rows];
        let mut yt = vec![0f64; DIM * rows];
        for r in 0..rows {
            for d in 0..DIM {
                xt[d * rows + r] = x[(start + r) * DIM + d] as f64;
                yt[d * rows + r] = y[(start + r) * DIM + d] as f64;
            }
        }
        let mut c = vec![0f64; DIM * DIM];
        f64::gemm_abt(DIM, rows, DIM, &xt, &yt, &mut c);
        c
    });
    let mut cross = vec![0f64; DIM * DIM];
    for p in partials {
        for (a, b) in cross.iter_mut().zip(p) {
            *a += b;
        }
    }
    let cross = DMatrix::from_row_slice(DIM, DIM, &cross);
    let svd = cross.svd(true, true);
    let r = svd.u.unwrap() * svd.v_t.unwrap();
    let mut out = vec![0f32; DIM * DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            out[i * DIM + j] = r[(i, j)] as f32;
        }
    }
    out
}
