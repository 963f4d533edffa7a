use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use image::imageops::{self, FilterType};
use image::GrayImage;

use crate::affinity::SparseAffinity;
use crate::error::{Error, Result};

const SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PerceptualHash {
    pub image_id: u32,
    pub bits: u64,
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// `cos(π (2x + 1) u / 64)` for the 32-point DCT-II.
fn dct_basis() -> &'static [[f64; SIDE]; SIDE] {
    static BASIS: OnceLock<[[f64; SIDE]; SIDE]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0f64; SIDE]; SIDE];
        for (u, row) in b.iter_mut().enumerate() {
            for (x, v) in row.iter_mut().enumerate() {
                *v = (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2 * SIDE) as f64).cos();
            }
        }
        b
    })
}

/// 64-bit DCT hash: downscale to 32×32, take the 8×8 block of lowest
/// frequencies after dropping row and column zero, and set a bit for every
/// coefficient strictly above their median. Bit 63 is coefficient (1, 1),
/// row-major.
pub fn phash64(image_id: u32, gray: &GrayImage) -> PerceptualHash {
    let small = imageops::resize(gray, SIDE as u32, SIDE as u32, FilterType::Triangle);
    // Removing the mean leaves AC terms unchanged but makes them exactly
    // zero for flat images.
    let mean = small.pixels().map(|p| p.0[0] as f64).sum::<f64>() / (SIDE * SIDE) as f64;
    let px: Vec<f64> = small.pixels().map(|p| p.0[0] as f64 - mean).collect();
    let basis = dct_basis();
    // Rows first: tmp[y][u] = Σ_x px[y][x] · basis[u][x], for u in 1..=8.
    let mut tmp = [[0f64; 8]; SIDE];
    for y in 0..SIDE {
        for u in 0..8 {
            tmp[y][u] = (0..SIDE).map(|x| px[y * SIDE + x] * basis[u + 1][x]).sum();
        }
    }
    let mut coeffs = [0f64; 64];
    for v in 0..8 {
        for u in 0..8 {
            coeffs[v * 8 + u] = (0..SIDE).map(|y| tmp[y][u] * basis[v + 1][y]).sum();
        }
    }
    let mut sorted = coeffs;
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[31] + sorted[32]) / 2.0;
    let bits = coeffs
        .iter()
        .fold(0u64, |acc, &c| (acc << 1) | u64::from(c > median));
    PerceptualHash { image_id, bits }
}

fn block(bits: u64, b: usize) -> u16 {
    (bits >> (16 * b)) as u16
}

/// All 16-bit values within Hamming distance `r` of `v`.
fn neighbours(v: u16, r: u32, out: &mut Vec<u16>) {
    fn rec(v: u16, start: u32, left: u32, out: &mut Vec<u16>) {
        out.push(v);
        if left == 0 {
            return;
        }
        for bit in start..16 {
            rec(v ^ (1 << bit), bit + 1, left - 1, out);
        }
    }
    out.clear();
    rec(v, 0, r.min(16), out);
}

fn hash_edge(a: &PerceptualHash, b: &PerceptualHash) -> (u32, u32, f64) {
    (a.image_id, b.image_id, (64 - hamming(a.bits, b.bits)) as f64 / 64.0)
}

/// Edges `(64 − d) / 64` between every pair at Hamming distance
/// `d ≤ max_distance`, found with four 16-bit multi-index tables: a pair
/// within `d` agrees to within `⌊d/4⌋` bits on at least one block.
pub fn affinity_from_hashes(n: usize, hashes: &[PerceptualHash], max_distance: u32) -> SparseAffinity {
    let radius = max_distance / 4;
    let mut tables: Vec<HashMap<u16, Vec<usize>>> = vec![HashMap::new(); 4];
    for (i, h) in hashes.iter().enumerate() {
        for (b, table) in tables.iter_mut().enumerate() {
            table.entry(block(h.bits, b)).or_default().push(i);
        }
    }
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut probe = Vec::new();
    for (i, h) in hashes.iter().enumerate() {
        for (b, table) in tables.iter().enumerate() {
            neighbours(block(h.bits, b), radius, &mut probe);
            for key in &probe {
                for &j in table.get(key).map(Vec::as_slice).unwrap_or(&[]) {
                    if j > i && hamming(h.bits, hashes[j].bits) <= max_distance {
                        pairs.insert((i, j));
                    }
                }
            }
        }
    }
    SparseAffinity::from_weights(n, pairs.into_iter().map(|(i, j)| hash_edge(&hashes[i], &hashes[j])))
}

/// Quadratic scan; the reference the multi-index search must agree with.
pub fn affinity_from_hashes_brute_force(n: usize, hashes: &[PerceptualHash], max_distance: u32) -> SparseAffinity {
    let mut edges = Vec::new();
    for (i, a) in hashes.iter().enumerate() {
        for b in &hashes[i + 1..] {
            if hamming(a.bits, b.bits) <= max_distance {
                edges.push(hash_edge(a, b));
            }
        }
    }
    SparseAffinity::from_weights(n, edges)
}

/// CSV `image_id,hash_hex`.
pub fn write_hash_dump(path: &Path, hashes: &[PerceptualHash]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "image_id,hash_hex")?;
    for h in hashes {
        writeln!(out, "{},{:016x}", h.image_id, h.bits)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_hash_dump(path: &Path) -> Result<Vec<PerceptualHash>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::format("hash dump", format!("line {}: {line:?}", n + 1));
        let (id, hex) = line.split_once(',').ok_or_else(bad)?;
        out.push(PerceptualHash {
            image_id: id.trim().parse().map_err(|_| bad())?,
            bits: u64::from_str_radix(hex.trim(), 16).map_err(|_| bad())?,
        });
    }
    Ok(out)
}
