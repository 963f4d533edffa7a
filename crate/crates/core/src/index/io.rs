//! `index.mgdi`: magic `MGDI`, u16 version, u32 dim / subspaces / centroids
//! per subspace / coarse_k, the rotation and PQ codebooks (row-major f32),
//! the coarse codebook, every list's entry count, then the packed entries
//! (`image_id` u32, keypoint u32, 8 code bytes). Little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::ivf::{IvfEntry, OpqIvfIndex};
use super::opq::{OpqModel, CENTROIDS, DIM, SUBSPACES, SUB_DIM};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"MGDI";
pub const INDEX_VERSION: u16 = 1;

fn write_f32s<W: Write>(out: &mut W, v: &[f32]) -> Result<()> {
    for &x in v {
        out.write_f32::<LE>(x)?;
    }
    Ok(())
}

fn read_f32s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut v = vec![0f32; n];
    input.read_f32_into::<LE>(&mut v)?;
    Ok(v)
}

pub fn write_index<W: Write>(out: &mut W, index: &OpqIvfIndex) -> Result<()> {
    out.write_all(INDEX_MAGIC)?;
    out.write_u16::<LE>(INDEX_VERSION)?;
    for v in [DIM, SUBSPACES, CENTROIDS, index.coarse_k()] {
        out.write_u32::<LE>(v as u32)?;
    }
    write_f32s(out, &index.opq.rotation)?;
    write_f32s(out, &index.opq.codebooks)?;
    write_f32s(out, &index.coarse)?;
    for list in &index.lists {
        out.write_u32::<LE>(list.len() as u32)?;
    }
    for list in &index.lists {
        for e in list {
            out.write_u32::<LE>(e.image_id)?;
            out.write_u32::<LE>(e.keypoint)?;
            out.write_all(&e.code)?;
        }
    }
    Ok(())
}

pub fn read_index<R: Read>(input: &mut R) -> Result<OpqIvfIndex> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != INDEX_MAGIC {
        return Err(Error::format("index", "bad magic"));
    }
    let version = input.read_u16::<LE>()?;
    if version != INDEX_VERSION {
        return Err(Error::format("index", format!("unsupported version {version}")));
    }
    let mut dims = [0u32; 4];
    input.read_u32_into::<LE>(&mut dims)?;
    let [dim, subspaces, centroids, coarse_k] = dims.map(|v| v as usize);
    if (dim, subspaces, centroids) != (DIM, SUBSPACES, CENTROIDS) {
        return Err(Error::format(
            "index",
            format!("layout {dim}/{subspaces}/{centroids} does not match {DIM}/{SUBSPACES}/{CENTROIDS}"),
        ));
    }
    let rotation = read_f32s(input, DIM * DIM)?;
    let codebooks = read_f32s(input, SUBSPACES * CENTROIDS * SUB_DIM)?;
    let coarse = read_f32s(input, coarse_k * DIM)?;
    let mut counts = vec![0u32; coarse_k];
    input.read_u32_into::<LE>(&mut counts)?;
    let mut lists = Vec::with_capacity(coarse_k);
    for &n in &counts {
        let mut list = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let image_id = input.read_u32::<LE>()?;
            let keypoint = input.read_u32::<LE>()?;
            let mut code = [0u8; SUBSPACES];
            input.read_exact(&mut code)?;
            list.push(IvfEntry {
                image_id,
                keypoint,
                code,
            });
        }
        lists.push(list);
    }
    Ok(OpqIvfIndex {
        opq: OpqModel {
            rotation,
            codebooks,
        },
        coarse,
        lists,
    })
}

pub fn write_index_file(path: &Path, index: &OpqIvfIndex) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_index(&mut out, index)?;
    out.flush()?;
    Ok(())
}

pub fn read_index_file(path: &Path) -> Result<OpqIvfIndex> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_index(&mut BufReader::new(file))
}
