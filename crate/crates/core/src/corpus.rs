//! Corpus ingest: manifest loading, dense id assignment, exact-byte dedup
//! and the persisted snapshot.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use image::GrayImage;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::par;

/// Longest side allowed for feature extraction; larger images are downscaled.
pub const MAX_FEATURE_SIDE: u32 = 1024;

pub type ContentHash = [u8; 32];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: u32,
    pub path: PathBuf,
    pub content_hash: ContentHash,
    pub source_tag: Option<String>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSnapshot {
    pub records: Vec<ImageRecord>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub manifest_digest: ContentHash,
}

impl CorpusSnapshot {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: u32) -> Option<&ImageRecord> {
        self.records.get(image_id as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipEntry {
    /// 1-based data row in the manifest (header excluded).
    pub row: usize,
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub snapshot: CorpusSnapshot,
    pub skipped: Vec<SkipEntry>,
    pub manifest_rows: usize,
}

#[derive(Debug, Clone)]
pub struct Deduped {
    pub snapshot: CorpusSnapshot,
    /// `old_to_new[old_id]` is the id the record maps to after dedup.
    pub old_to_new: Vec<u32>,
}

impl Deduped {
    pub fn removed(&self) -> usize {
        self.old_to_new.len() - self.snapshot.len()
    }
}

struct ManifestRow {
    row: usize,
    path: PathBuf,
    source_tag: Option<String>,
}

fn read_manifest(manifest_path: &Path) -> Result<(Vec<ManifestRow>, ContentHash)> {
    let bytes = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let digest: ContentHash = Sha256::digest(&bytes).into();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let bad = |message: String| Error::Manifest {
        path: manifest_path.to_path_buf(),
        message,
    };
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let path_col = headers
        .iter()
        .position(|h| h == "path")
        .ok_or_else(|| bad("missing `path` column".into()))?;
    let tag_col = headers.iter().position(|h| h == "source_tag");

    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let Some(path) = rec.get(path_col).filter(|p| !p.is_empty()) else {
            continue;
        };
        let source_tag = tag_col
            .and_then(|c| rec.get(c))
            .filter(|t| !t.is_empty())
            .map(str::to_owned);
        rows.push(ManifestRow {
            row: i + 1,
            path: PathBuf::from(path),
            source_tag,
        });
    }
    Ok((rows, digest))
}

fn resolve_under(root: &Path, rel: &Path) -> std::result::Result<PathBuf, String> {
    let joined = root.join(rel);
    let canon = joined
        .canonicalize()
        .map_err(|e| format!("cannot resolve: {e}"))?;
    let root = root
        .canonicalize()
        .map_err(|e| format!("cannot resolve image root: {e}"))?;
    if canon.starts_with(&root) {
        Ok(canon)
    } else {
        Err("path escapes image root".into())
    }
}

struct Decoded {
    path: PathBuf,
    content_hash: ContentHash,
    width: u32,
    height: u32,
}

fn decode_one(root: &Path, row: &ManifestRow) -> std::result::Result<Decoded, String> {
    let path = resolve_under(root, &row.path)?;
    let bytes = fs::read(&path).map_err(|e| format!("read failed: {e}"))?;
    let img = image::load_from_memory(&bytes).map_err(|e| format!("decode failed: {e}"))?;
    if img.width() == 0 || img.height() == 0 {
        return Err("zero-sized image".into());
    }
    Ok(Decoded {
        path,
        content_hash: Sha256::digest(&bytes).into(),
        width: img.width(),
        height: img.height(),
    })
}

/// Loads the manifest and every image it lists, assigning dense ids in
/// manifest order. Undecodable rows are reported, not fatal.
pub fn ingest_manifest(manifest_path: &Path, image_root: &Path) -> Result<Ingested> {
    let (rows, manifest_digest) = read_manifest(manifest_path)?;
    let manifest_rows = rows.len();
    if rows.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let decoded = par::map(&rows, |row| decode_one(image_root, row));

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (row, result) in rows.into_iter().zip(decoded) {
        match result {
            Ok(d) => records.push(ImageRecord {
                image_id: records.len() as u32,
                path: d.path,
                content_hash: d.content_hash,
                source_tag: row.source_tag,
                width: d.width,
                height: d.height,
            }),
            Err(reason) => {
                log::warn!("skipping manifest row {} ({}): {reason}", row.row, row.path.display());
                skipped.push(SkipEntry {
                    row: row.row,
                    path: row.path,
                    reason,
                });
            }
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let created_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(Ingested {
        snapshot: CorpusSnapshot {
            records,
            created_at,
            manifest_digest,
        },
        skipped,
        manifest_rows,
    })
}

/// Keeps the first record for every distinct content hash and re-densifies ids.
pub fn dedup_exact(snapshot: CorpusSnapshot) -> Deduped {
    let mut first_seen: HashMap<ContentHash, u32> = HashMap::new();
    let mut old_to_new = Vec::with_capacity(snapshot.records.len());
    let mut records = Vec::new();
    for rec in snapshot.records {
        match first_seen.get(&rec.content_hash) {
            Some(&new_id) => old_to_new.push(new_id),
            None => {
                let new_id = records.len() as u32;
                first_seen.insert(rec.content_hash, new_id);
                old_to_new.push(new_id);
                records.push(ImageRecord {
                    image_id: new_id,
                    ..rec
                });
            }
        }
    }
    Deduped {
        snapshot: CorpusSnapshot {
            records,
            ..snapshot
        },
        old_to_new,
    }
}

/// Decodes an image to 8-bit grayscale, downscaling so the longest side is
/// at most [`MAX_FEATURE_SIDE`].
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::format("image", format!("{}: {e}", path.display())))?;
    Ok(limit_size(img.to_luma8()))
}

pub fn limit_size(gray: GrayImage) -> GrayImage {
    let (w, h) = gray.dimensions();
    let longest = w.max(h);
    if longest <= MAX_FEATURE_SIDE {
        return gray;
    }
    let f = MAX_FEATURE_SIDE as f64 / longest as f64;
    let nw = ((w as f64 * f).round() as u32).max(1);
    let nh = ((h as f64 * f).round() as u32).max(1);
    image::imageops::resize(&gray, nw, nh, image::imageops::FilterType::Triangle)
}

const SNAPSHOT_MAGIC: &str = "# memegraph corpus snapshot v1";

/// Writes the snapshot as tab-separated records with a two-line preamble.
pub fn write_snapshot(snapshot: &CorpusSnapshot, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{SNAPSHOT_MAGIC}")?;
    writeln!(
        out,
        "# created_at={} manifest_digest={}",
        snapshot.created_at,
        hex::encode(snapshot.manifest_digest)
    )?;
    {
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(&mut out);
        w.write_record(["image_id", "path", "content_hash", "source_tag", "width", "height"])
            .map_err(csv_err)?;
        for r in &snapshot.records {
            w.write_record([
                r.image_id.to_string(),
                r.path.to_string_lossy().into_owned(),
                hex::encode(r.content_hash),
                r.source_tag.clone().unwrap_or_default(),
                r.width.to_string(),
                r.height.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("record file", e.to_string())
}

fn parse_hash(s: &str) -> Result<ContentHash> {
    let bytes = hex::decode(s).map_err(|e| Error::format("snapshot", e.to_string()))?;
    bytes
        .try_into()
        .map_err(|_| Error::format("snapshot", "digest must be 32 bytes"))
}

pub fn read_snapshot(path: &Path) -> Result<CorpusSnapshot> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != SNAPSHOT_MAGIC {
        return Err(Error::format("snapshot", "bad magic line"));
    }
    line.clear();
    reader.read_line(&mut line)?;
    let mut created_at = None;
    let mut manifest_digest = None;
    for kv in line.trim_start_matches('#').split_whitespace() {
        match kv.split_once('=') {
            Some(("created_at", v)) => created_at = v.parse().ok(),
            Some(("manifest_digest", v)) => manifest_digest = Some(parse_hash(v)?),
            _ => {}
        }
    }
    let (Some(created_at), Some(manifest_digest)) = (created_at, manifest_digest) else {
        return Err(Error::format("snapshot", "missing preamble fields"));
    };

    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_reader(reader);
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<u32> {
            field(i)
                .parse()
                .map_err(|_| Error::format("snapshot", format!("bad integer {:?}", field(i))))
        };
        let image_id = num(0)?;
        if image_id as usize != records.len() {
            return Err(Error::format("snapshot", "ids must be dense and sorted"));
        }
        let tag = field(3);
        records.push(ImageRecord {
            image_id,
            path: PathBuf::from(field(1)),
            content_hash: parse_hash(field(2))?,
            source_tag: (!tag.is_empty()).then(|| tag.to_owned()),
            width: num(4)?,
            height: num(5)?,
        });
    }
    Ok(CorpusSnapshot {
        records,
        created_at,
        manifest_digest,
    })
}

/// Persists the dedup map as `old_id,new_id` lines.
pub fn write_dedup_map(old_to_new: &[u32], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["old_id", "new_id"]).map_err(csv_err)?;
    for (old, new) in old_to_new.iter().enumerate() {
        w.write_record([old.to_string(), new.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
