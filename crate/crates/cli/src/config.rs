//! Run configuration: a flat `key = value` file, overridable per key from
//! the command line, written verbatim next to every output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use memegraph::affinity::AffinityConfig;
use memegraph::baselines::{DEFAULT_EMBEDDING_KNN, DEFAULT_MAX_HAMMING};
use memegraph::eval::TASKS_PER_CLUSTER;
use memegraph::features::{ExtractConfig, MAX_FEATURES};
use memegraph::index::{IndexConfig, OpqConfig, SearchParams, SUBSPACES};
use memegraph::matcher::{RansacConfig, DEFAULT_J};
use memegraph::pipeline::DEFAULT_QUERY_FRACTION;
use memegraph::spectral::DEFAULT_RESTARTS;

/// Which affinity graph the clustering stages consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// The local-feature matching graph.
    None,
    Phash,
    Embedding,
}

impl Baseline {
    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::None => "none",
            Baseline::Phash => "phash",
            Baseline::Embedding => "embedding",
        }
    }
}

impl FromStr for Baseline {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "mgd" => Ok(Baseline::None),
            "phash" => Ok(Baseline::Phash),
            "embedding" => Ok(Baseline::Embedding),
            _ => bail!("unknown baseline {s:?} (expected none, phash or embedding)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    /// Defaults to the manifest's directory.
    pub image_root: Option<PathBuf>,
    pub max_features: usize,
    pub coarse_k: usize,
    pub subspaces: usize,
    pub pq_sample: usize,
    pub opq_iterations: usize,
    pub knn: usize,
    pub nprobe: usize,
    pub query_fraction: f64,
    pub j: usize,
    pub ransac_iterations: usize,
    pub inlier_px: f64,
    pub k: usize,
    pub restarts: usize,
    pub baseline: Baseline,
    pub phash_max_distance: u32,
    pub embeddings: Option<PathBuf>,
    pub embedding_knn: usize,
    pub tasks_per_cluster: usize,
    pub control_pool: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let index = IndexConfig::default();
        let search = SearchParams::default();
        let ransac = RansacConfig::default();
        RunConfig {
            seed: 0,
            manifest: None,
            image_root: None,
            max_features: MAX_FEATURES,
            coarse_k: index.coarse_k,
            subspaces: SUBSPACES,
            pq_sample: index.pq_sample,
            opq_iterations: OpqConfig::default().iterations,
            knn: search.knn,
            nprobe: search.nprobe,
            query_fraction: DEFAULT_QUERY_FRACTION,
            j: DEFAULT_J,
            ransac_iterations: ransac.iterations,
            inlier_px: ransac.inlier_px as f64,
            k: 100,
            restarts: DEFAULT_RESTARTS,
            baseline: Baseline::None,
            phash_max_distance: DEFAULT_MAX_HAMMING,
            embeddings: None,
            embedding_knn: DEFAULT_EMBEDDING_KNN,
            tasks_per_cluster: TASKS_PER_CLUSTER,
            control_pool: 20,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value {value:?} for {key}: {e}"))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub const KEYS: [&'static str; 22] = [
        "seed",
        "manifest",
        "image_root",
        "max_features",
        "coarse_k",
        "subspaces",
        "pq_sample",
        "opq_iterations",
        "knn",
        "nprobe",
        "query_fraction",
        "j",
        "ransac_iterations",
        "inlier_px",
        "k",
        "restarts",
        "baseline",
        "phash_max_distance",
        "embeddings",
        "embedding_knn",
        "tasks_per_cluster",
        "control_pool",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "manifest" => self.manifest = opt_path(v),
            "image_root" => self.image_root = opt_path(v),
            "max_features" => self.max_features = parse(key, v)?,
            "coarse_k" => self.coarse_k = parse(key, v)?,
            "subspaces" => self.subspaces = parse(key, v)?,
            "pq_sample" => self.pq_sample = parse(key, v)?,
            "opq_iterations" => self.opq_iterations = parse(key, v)?,
            "knn" => self.knn = parse(key, v)?,
            "nprobe" => self.nprobe = parse(key, v)?,
            "query_fraction" => self.query_fraction = parse(key, v)?,
            "j" | "J" => self.j = parse(key, v)?,
            "ransac_iterations" => self.ransac_iterations = parse(key, v)?,
            "inlier_px" => self.inlier_px = parse(key, v)?,
            "k" | "K" => self.k = parse(key, v)?,
            "restarts" => self.restarts = parse(key, v)?,
            "baseline" => self.baseline = v.parse()?,
            "phash_max_distance" => self.phash_max_distance = parse(key, v)?,
            "embeddings" => self.embeddings = opt_path(v),
            "embedding_knn" => self.embedding_knn = parse(key, v)?,
            "tasks_per_cluster" => self.tasks_per_cluster = parse(key, v)?,
            "control_pool" => self.control_pool = parse(key, v)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "manifest" => show_path(&self.manifest),
            "image_root" => show_path(&self.image_root),
            "max_features" => self.max_features.to_string(),
            "coarse_k" => self.coarse_k.to_string(),
            "subspaces" => self.subspaces.to_string(),
            "pq_sample" => self.pq_sample.to_string(),
            "opq_iterations" => self.opq_iterations.to_string(),
            "knn" => self.knn.to_string(),
            "nprobe" => self.nprobe.to_string(),
            "query_fraction" => self.query_fraction.to_string(),
            "j" => self.j.to_string(),
            "ransac_iterations" => self.ransac_iterations.to_string(),
            "inlier_px" => self.inlier_px.to_string(),
            "k" => self.k.to_string(),
            "restarts" => self.restarts.to_string(),
            "baseline" => self.baseline.as_str().to_string(),
            "phash_max_distance" => self.phash_max_distance.to_string(),
            "embeddings" => show_path(&self.embeddings),
            "embedding_knn" => self.embedding_knn.to_string(),
            "tasks_per_cluster" => self.tasks_per_cluster.to_string(),
            "control_pool" => self.control_pool.to_string(),
            other => panic!("unknown config key {other:?}"),
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys not named
    /// keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value, got {raw:?}", n + 1))?;
            cfg.set(k, v).with_context(|| format!("line {}", n + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Every key in fixed order, so equal configs serialize identically.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# memegraph run configuration\n");
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key));
        }
        s
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("override {o:?} is not key=value"))?;
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.subspaces != SUBSPACES {
            bail!("subspaces must be {SUBSPACES}: codes are fixed at 8 bytes");
        }
        if !(self.query_fraction > 0.0 && self.query_fraction <= 1.0) {
            bail!("query_fraction must lie in (0, 1]");
        }
        if !(self.inlier_px > 0.0 && self.inlier_px.is_finite()) {
            bail!("inlier_px must be positive");
        }
        for (name, v) in [
            ("max_features", self.max_features),
            ("coarse_k", self.coarse_k),
            ("pq_sample", self.pq_sample),
            ("opq_iterations", self.opq_iterations),
            ("knn", self.knn),
            ("nprobe", self.nprobe),
            ("j", self.j),
            ("ransac_iterations", self.ransac_iterations),
            ("k", self.k),
            ("restarts", self.restarts),
            ("embedding_knn", self.embedding_knn),
            ("tasks_per_cluster", self.tasks_per_cluster),
        ] {
            if v == 0 {
                bail!("{name} must be at least 1");
            }
        }
        if self.nprobe > self.coarse_k {
            bail!("nprobe ({}) exceeds coarse_k ({})", self.nprobe, self.coarse_k);
        }
        if self.phash_max_distance > 64 {
            bail!("phash_max_distance must be at most 64");
        }
        if self.control_pool < memegraph::eval::SESSION_CONTROLS {
            bail!("control_pool must hold at least {} controls", memegraph::eval::SESSION_CONTROLS);
        }
        Ok(())
    }

    pub fn extract(&self) -> ExtractConfig {
        ExtractConfig {
            max_features: self.max_features,
            ..ExtractConfig::default()
        }
    }

    pub fn opq(&self) -> OpqConfig {
        OpqConfig {
            iterations: self.opq_iterations,
            seed: self.seed,
            ..OpqConfig::default()
        }
    }

    pub fn index(&self) -> IndexConfig {
        IndexConfig {
            coarse_k: self.coarse_k,
            pq_sample: self.pq_sample,
            seed: self.seed,
            ..IndexConfig::default()
        }
    }

    pub fn affinity(&self) -> AffinityConfig {
        AffinityConfig {
            j: self.j,
            search: SearchParams {
                knn: self.knn,
                nprobe: self.nprobe,
            },
            ransac: RansacConfig {
                iterations: self.ransac_iterations,
                inlier_px: self.inlier_px as f32,
                ..RansacConfig::default()
            },
            seed: self.seed,
        }
    }

    pub fn image_root(&self) -> Option<PathBuf> {
        self.image_root.clone().or_else(|| {
            self.manifest
                .as_ref()
                .map(|m| m.parent().map(Path::to_path_buf).unwrap_or_default())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_overrides(&["k=20".into(), "manifest=/data/m.csv".into(), "baseline=phash".into()])
            .unwrap();
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn defaults_follow_the_pipeline_constants() {
        let c = RunConfig::default();
        assert_eq!((c.max_features, c.coarse_k, c.subspaces), (2500, 2048, 8));
        assert_eq!((c.knn, c.nprobe, c.j), (5, 32, 100));
        assert_eq!(c.query_fraction, 0.1);
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(RunConfig::parse("colour = blue").is_err());
        assert!(RunConfig::parse("k = many").is_err());
        assert!(RunConfig::parse("just a line").is_err());
        assert!(RunConfig::parse("subspaces = 16").is_err());
        assert!(RunConfig::parse("query_fraction = 0").is_err());
        assert!(RunConfig::parse("nprobe = 64\ncoarse_k = 32").is_err());
        let c = RunConfig::parse("# comment only\n\nk = 7 # trailing\n").unwrap();
        assert_eq!(c.k, 7);
    }
}
