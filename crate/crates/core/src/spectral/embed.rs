//! Bottom eigenvectors of the symmetric normalized Laplacian
//! `L = I − D^{-1/2} A D^{-1/2}` via Lanczos, one connected component at a
//! time.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::affinity::{component_labels, SparseAffinity};
use crate::error::{Error, Result};
use crate::par;

/// Ritz pairs are accepted once their residual norm drops below this.
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEmbedding {
    pub n_active: usize,
    pub k: usize,
    /// `n_active × k`, row-major, rows L2-normalized.
    pub coords: Vec<f64>,
    /// Ascending Laplacian eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Active row → image id.
    pub node_map: Vec<u32>,
}

impl SpectralEmbedding {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.coords[r * self.k..(r + 1) * self.k]
    }
}

/// Compressed rows of the normalized operator `D^{-1/2} A D^{-1/2}`
/// restricted to one component, in local indices.
struct Operator {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Operator {
    fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let row = |i: usize| {
            let mut acc = 0.0;
            for p in self.offsets[i]..self.offsets[i + 1] {
                acc += self.vals[p] * x[self.cols[p] as usize];
            }
            acc
        };
        if self.len() >= 4096 {
            y.copy_from_slice(&par::map_range(self.len(), row));
        } else {
            for (i, out) in y.iter_mut().enumerate() {
                *out = row(i);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Removes the components along `trivial` and every basis vector, twice.
fn orthogonalize(w: &mut [f64], trivial: &[f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        axpy(-dot(w, trivial), trivial, w);
        for q in basis {
            axpy(-dot(w, q), q, w);
        }
    }
}

/// Largest `want` eigenpairs of `op` on the complement of `trivial`, by
/// Lanczos with full reorthogonalization. The Krylov basis grows until the
/// wanted Ritz pairs converge or it spans the whole complement; an
/// invariant subspace triggers a fresh random direction.
fn lanczos_top(op: &Operator, trivial: &[f64], want: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, Vec<f64>)> {
    let m = op.len();
    let max_steps = m - 1;
    if want == 0 || max_steps == 0 {
        return Vec::new();
    }
    let random_direction = |basis: &[Vec<f64>], rng: &mut ChaCha8Rng| loop {
        let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        orthogonalize(&mut v, trivial, basis);
        if normalize(&mut v) > 1e-8 {
            return v;
        }
    };

    let mut basis: Vec<Vec<f64>> = vec![random_direction(&[], rng)];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0f64; m];
    let mut target = max_steps.min((2 * want + 20).max(40));
    loop {
        while alpha.len() < target {
            let j = alpha.len();
            op.apply(&basis[j], &mut w);
            let a = dot(&basis[j], &w);
            alpha.push(a);
            orthogonalize(&mut w, trivial, &basis);
            let b = dot(&w, &w).sqrt();
            if alpha.len() == max_steps {
                beta.push(b);
                break;
            }
            if b < 1e-10 {
                // Invariant subspace: restart in an unexplored direction.
                beta.push(0.0);
                let v = random_direction(&basis, rng);
                basis.push(v);
            } else {
                beta.push(b);
                basis.push(w.iter().map(|x| x / b).collect());
            }
        }

        let steps = alpha.len();
        let t = DMatrix::from_fn(steps, steps, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..steps).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let take = want.min(steps);
        let last_beta = beta[steps - 1];
        let converged = steps == max_steps
            || order[..take]
                .iter()
                .all(|&i| (last_beta * eig.eigenvectors[(steps - 1, i)]).abs() < RESIDUAL_TOL);
        if converged {
            return order[..take]
                .iter()
                .map(|&i| {
                    let mut v = vec![0f64; m];
                    for (j, q) in basis.iter().take(steps).enumerate() {
                        axpy(eig.eigenvectors[(j, i)], q, &mut v);
                    }
                    normalize(&mut v);
                    (eig.eigenvalues[i], v)
                })
                .collect();
        }
        target = max_steps.min(steps * 2);
    }
}

/// Spectral embedding with `k` eigenvectors. Only nodes with at least one
/// edge are embedded; `k` must not exceed their number.
pub fn spectral_embed(a: &SparseAffinity, k: usize) -> Result<SpectralEmbedding> {
    let node_map = a.active_nodes();
    let n_active = node_map.len();
    if k == 0 || k > n_active {
        return Err(Error::EmbeddingTooLarge { k, n_active });
    }
    let mut local = vec![u32::MAX; a.n];
    for (r, &v) in node_map.iter().enumerate() {
        local[v as usize] = r as u32;
    }
    // Scale-free weights: A and cA give the same operator bit for bit.
    let scale = a.max_weight();
    let mut degree = vec![0f64; n_active];
    let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_active];
    for &(i, j, w) in &a.edges {
        let (li, lj) = (local[i as usize], local[j as usize]);
        let w = w / scale;
        degree[li as usize] += w;
        degree[lj as usize] += w;
        adj[li as usize].push((lj, w));
        adj[lj as usize].push((li, w));
    }
    if let Some(r) = degree.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::IsolatedNode(node_map[r] as usize));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();

    // Components in order of their smallest member.
    let labels = component_labels(a);
    let mut components: Vec<Vec<u32>> = Vec::new();
    let mut comp_of_label = std::collections::BTreeMap::new();
    for (r, &v) in node_map.iter().enumerate() {
        let c = *comp_of_label.entry(labels[v as usize]).or_insert_with(|| {
            components.push(Vec::new());
            components.len() - 1
        });
        components[c].push(r as u32);
    }

    // Row → position within its component.
    let mut pos = vec![0u32; n_active];
    for rows in &components {
        for (p, &r) in rows.iter().enumerate() {
            pos[r as usize] = p as u32;
        }
    }
    // (eigenvalue, component, vector over the component's rows)
    let mut pairs: Vec<(f64, usize, Vec<f64>)> = Vec::new();
    for (c, rows) in components.iter().enumerate() {
        let mut op = Operator {
            offsets: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        };
        for &r in rows {
            let mut row = adj[r as usize].clone();
            row.sort_by_key(|e| e.0);
            for (nb, w) in row {
                op.cols.push(pos[nb as usize]);
                op.vals.push(inv_sqrt[r as usize] * w * inv_sqrt[nb as usize]);
            }
            op.offsets.push(op.cols.len());
        }
        let mut trivial: Vec<f64> = rows.iter().map(|&r| degree[r as usize].sqrt()).collect();
        normalize(&mut trivial);

        let want = k.min(rows.len()) - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + c as u64);
        let top = lanczos_top(&op, &trivial, want, &mut rng);
        pairs.push((0.0, c, trivial));
        pairs.extend(top.into_iter().map(|(theta, v)| ((1.0 - theta).clamp(0.0, 2.0), c, v)));
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    pairs.truncate(k);

    let mut coords = vec![0f64; n_active * k];
    for (col, (_, c, v)) in pairs.iter().enumerate() {
        for (&r, &x) in components[*c].iter().zip(v) {
            coords[r as usize * k + col] = x;
        }
    }
    for row in coords.chunks_exact_mut(k) {
        normalize(row);
    }
    Ok(SpectralEmbedding {
        n_active,
        k,
        coords,
        eigenvalues: pairs.iter().map(|p| p.0).collect(),
        node_map,
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    /// Full spectrum of the normalized Laplacian over active nodes, dense.
    fn dense_spectrum(a: &SparseAffinity) -> Vec<f64> {
        let active = a.active_nodes();
        let n = active.len();
        let pos = |v: u32| active.binary_search(&v).unwrap();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for &(i, j, w) in &a.edges {
            m[(pos(i), pos(j))] = w;
            m[(pos(j), pos(i))] = w;
        }
        let d: Vec<f64> = (0..n).map(|i| m.row(i).sum()).collect();
        let l = DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - m[(i, j)] / (d[i] * d[j]).sqrt()
        });
        let mut ev: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    fn random_graph(n: usize, p: f64, seed: u64) -> SparseAffinity {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n as u32 {
            for j in i + 1..n as u32 {
                if rng.random_bool(p) {
                    edges.push((i, j, rng.random_range(1..20) as f64));
                }
            }
        }
        SparseAffinity::from_weights(n, edges)
    }

    fn cliques(sizes: &[usize]) -> SparseAffinity {
        let mut edges = Vec::new();
        let mut base = 0u32;
        for &s in sizes {
            for i in 0..s as u32 {
                for j in i + 1..s as u32 {
                    edges.push((base + i, base + j, 1.0));
                }
            }
            base += s as u32;
        }
        SparseAffinity::from_weights(base as usize, edges)
    }

    #[test]
    fn eigenvalues_match_dense_oracle() {
        for seed in 0..20u64 {
            let n = 10 + (seed as usize * 7) % 41;
            let g = random_graph(n, 0.08 + 0.01 * (seed % 5) as f64, seed);
            let dense = dense_spectrum(&g);
            let n_active = dense.len();
            for k in [1, 2, n_active.min(6), n_active] {
                let emb = spectral_embed(&g, k).unwrap();
                for (a, b) in emb.eigenvalues.iter().zip(&dense) {
                    assert!((a - b).abs() < 1e-6, "seed {seed} k {k}: {a} vs {b}");
                }
                assert_eq!(emb.eigenvalues.len(), k);
            }
        }
    }

    #[test]
    fn two_cliques_give_indicator_rows() {
        let emb = spectral_embed(&cliques(&[6, 9]), 2).unwrap();
        assert!(emb.eigenvalues.iter().all(|e| e.abs() <= 1e-8));
        for r in 0..15 {
            let same = if r < 6 { 0 } else { 6 };
            for (a, b) in emb.row(r).iter().zip(emb.row(same)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert!(dot(emb.row(0), emb.row(10)).abs() < 1e-6);
    }

    #[test]
    fn full_spectrum_is_bounded_and_rows_are_unit() {
        let g = random_graph(30, 0.3, 77);
        let n_active = g.active_nodes().len();
        let emb = spectral_embed(&g, n_active).unwrap();
        assert!(*emb.eigenvalues.last().unwrap() <= 2.0 + 1e-8);
        assert!(emb.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        for r in 0..n_active {
            let norm = dot(emb.row(r), emb.row(r)).sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_eigenvalues_count_components() {
        let g = cliques(&[3, 5, 4, 7]);
        let emb = spectral_embed(&g, 8).unwrap();
        let zeros = emb.eigenvalues.iter().filter(|e| e.abs() < 1e-8).count();
        assert_eq!(zeros, 4);
    }

    #[test]
    fn weight_scaling_is_exactly_invariant() {
        let g = random_graph(40, 0.2, 5);
        let scaled = SparseAffinity {
            n: g.n,
            edges: g.edges.iter().map(|&(i, j, w)| (i, j, w * 10.0)).collect(),
        };
        assert_eq!(spectral_embed(&g, 5).unwrap(), spectral_embed(&scaled, 5).unwrap());
    }

    #[test]
    fn oversized_k_and_empty_graphs_are_rejected() {
        let g = cliques(&[3]);
        assert!(matches!(
            spectral_embed(&g, 4),
            Err(Error::EmbeddingTooLarge { k: 4, n_active: 3 })
        ));
        assert!(spectral_embed(&SparseAffinity::empty(5), 1).is_err());
    }

    #[test]
    fn isolated_nodes_are_left_out() {
        let mut g = cliques(&[4, 4]);
        g.n = 12;
        let emb = spectral_embed(&g, 2).unwrap();
        assert_eq!(emb.node_map, (0..8).collect::<Vec<_>>());
    }
}
