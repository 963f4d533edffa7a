use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::affinity::SparseAffinity;
use crate::error::{Error, Result};
use crate::kmeans::Real;
use crate::par;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"MGDE";
pub const EMBEDDING_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEmbedding {
    pub image_id: u32,
    /// Unit length after loading.
    pub vector: Vec<f32>,
}

/// Sidecar layout: magic `MGDE`, u16 version, u32 count, u32 dim, then per
/// image a u32 id followed by `dim` f32 values. Little-endian.
pub fn write_embeddings<W: Write>(out: &mut W, embeddings: &[GlobalEmbedding]) -> Result<()> {
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    if embeddings.iter().any(|e| e.vector.len() != dim) {
        return Err(Error::InvalidArgument("embeddings differ in dimension".into()));
    }
    out.write_all(EMBEDDING_MAGIC)?;
    out.write_u16::<LE>(EMBEDDING_VERSION)?;
    out.write_u32::<LE>(embeddings.len() as u32)?;
    out.write_u32::<LE>(dim as u32)?;
    for e in embeddings {
        out.write_u32::<LE>(e.image_id)?;
        for &v in &e.vector {
            out.write_f32::<LE>(v)?;
        }
    }
    Ok(())
}

/// Reads and L2-normalizes every vector.
pub fn read_embeddings<R: Read>(input: &mut R) -> Result<Vec<GlobalEmbedding>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::format("embeddings", "bad magic"));
    }
    let version = input.read_u16::<LE>()?;
    if version != EMBEDDING_VERSION {
        return Err(Error::format("embeddings", format!("unsupported version {version}")));
    }
    let count = input.read_u32::<LE>()? as usize;
    let dim = input.read_u32::<LE>()? as usize;
    if dim == 0 && count > 0 {
        return Err(Error::format("embeddings", "zero dimension"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let image_id = input.read_u32::<LE>()?;
        let mut vector = vec![0f32; dim];
        input.read_f32_into::<LE>(&mut vector)?;
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("embeddings", format!("non-finite value for image {image_id}")));
        }
        let norm = vector.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::format("embeddings", format!("zero vector for image {image_id}")));
        }
        vector.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
        out.push(GlobalEmbedding { image_id, vector });
    }
    Ok(out)
}

pub fn write_embeddings_file(path: &Path, embeddings: &[GlobalEmbedding]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_embeddings(&mut out, embeddings)?;
    out.flush()?;
    Ok(())
}

pub fn read_embeddings_file(path: &Path) -> Result<Vec<GlobalEmbedding>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(&mut BufReader::new(file))
}

/// Exact cosine k-NN graph over images `0..n`, weight `max(cos, 0)`,
/// symmetrized by max. Every image needs an embedding.
pub fn affinity_from_embeddings(n: usize, embeddings: &[GlobalEmbedding], knn: usize) -> Result<SparseAffinity> {
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    let mut rows: Vec<Option<&[f32]>> = vec![None; n];
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(Error::InvalidArgument("embeddings differ in dimension".into()));
        }
        if let Some(slot) = rows.get_mut(e.image_id as usize) {
            *slot = Some(&e.vector);
        }
    }
    let missing: Vec<u32> = (0..n as u32).filter(|&i| rows[i as usize].is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    let data: Vec<f32> = rows.iter().flat_map(|r| r.unwrap().iter().copied()).collect();
    const BLOCK: usize = 256;
    let blocks = par::map_range(n.div_ceil(BLOCK), |b| {
        let start = b * BLOCK;
        let m = BLOCK.min(n - start);
        let mut sims = vec![0f32; m * n];
        f32::gemm_abt(m, dim, n, &data[start * dim..(start + m) * dim], &data, &mut sims);
        let mut edges = Vec::new();
        let mut order: Vec<(f32, u32)> = Vec::with_capacity(n);
        for r in 0..m {
            let i = (start + r) as u32;
            order.clear();
            order.extend(
                sims[r * n..(r + 1) * n]
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j as u32 != i)
                    .map(|(j, &s)| (s, j as u32)),
            );
            let cmp = |a: &(f32, u32), b: &(f32, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            let k = knn.min(order.len());
            if k == 0 {
                continue;
            }
            if k < order.len() {
                order.select_nth_unstable_by(k - 1, cmp);
                order.truncate(k);
            }
            order.sort_unstable_by(cmp);
            // Cosines of unit vectors can round slightly past 1.
            edges.extend(order.iter().map(|&(s, j)| (i, j, (s as f64).min(1.0))));
        }
        edges
    });
    Ok(SparseAffinity::from_weights(n, blocks.into_iter().flatten()))
}
