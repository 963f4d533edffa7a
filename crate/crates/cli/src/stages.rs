//! Pipeline stages over a work directory. Each stage persists its
//! artifacts atomically and records a fingerprint of the inputs and
//! settings it used; a later run skips a stage whose fingerprint and
//! artifacts are unchanged.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use memegraph::affinity::{
    affinity_from_results, connected_components, largest_component_coverage, read_affinity, run_queries,
    sample_queries, write_affinity, QueryResult, SparseAffinity,
};
use memegraph::baselines::{
    affinity_from_embeddings, affinity_from_hashes, phash64, read_embeddings_file, write_hash_dump, PerceptualHash,
};
use memegraph::corpus::{
    dedup_exact, ingest_manifest, load_gray, read_snapshot, write_dedup_map, write_snapshot, CorpusSnapshot,
};
use memegraph::eval::{control_tasks, generate_tasks, write_tasks};
use memegraph::features::{extract_batch, read_feature_store, write_feature_store, FeatureSet};
use memegraph::index::{read_index_file, write_index_file, OpqIvfIndex};
use memegraph::par;
use memegraph::pipeline::index_features;
use memegraph::spectral::{
    cluster_stats, format_stats, read_assignment, spectral_cluster, spectral_cluster_capped, write_assignment,
    ClusterAssignment,
};

use crate::config::{Baseline, RunConfig};

pub const CONFIG_FILE: &str = "run.conf";
pub const STAGE_LOG: &str = "stages.json";
pub const SNAPSHOT: &str = "corpus.snapshot";
pub const DEDUP_MAP: &str = "dedup_map.csv";
pub const SKIPPED: &str = "skipped.csv";
pub const FEATURES: &str = "features.mgdf";
pub const INDEX: &str = "index.mgdi";
pub const QUERIES: &str = "queries.txt";
pub const MATCH_DUMP: &str = "matches.jsonl";
pub const HASHES: &str = "hashes.csv";
pub const TASKS: &str = "tasks.tsv";
pub const TASK_SKIPS: &str = "tasks_skipped.csv";
pub const RESPONSES: &str = "responses.csv";
pub const RUN_META: &str = "run_meta.json";

/// Images decoded per extraction batch, bounding peak memory.
const EXTRACT_BATCH: usize = 256;

/// Marks an error as a failure inside the named stage.
#[derive(Debug, Clone)]
pub struct StageFailed(pub &'static str);

impl fmt::Display for StageFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed", self.0)
    }
}

/// Marks an error as bad invocation or configuration.
#[derive(Debug, Clone)]
pub struct UsageError;

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("usage error")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub fingerprint: String,
    pub seconds: f64,
    pub finished_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Reused,
}

pub struct Workspace {
    pub dir: PathBuf,
    pub config: RunConfig,
    /// Re-run stages even when their fingerprint matches.
    pub force: bool,
    log: BTreeMap<String, StageRecord>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes through a temporary sibling and renames, so a crash never leaves
/// a truncated artifact that a later run would mistake for a finished one.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&Path) -> memegraph::Result<()>,
{
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    write(&tmp).with_context(|| format!("writing {}", path.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, |p| {
        fs::write(p, text).map_err(memegraph::Error::from)?;
        Ok(())
    })
}

impl Workspace {
    pub fn open(dir: &Path, config: RunConfig, force: bool) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating work directory {}", dir.display()))?;
        let log_path = dir.join(STAGE_LOG);
        let log = if log_path.exists() {
            serde_json::from_slice(&fs::read(&log_path)?)
                .with_context(|| format!("parsing {}", log_path.display()))?
        } else {
            BTreeMap::new()
        };
        Ok(Workspace {
            dir: dir.to_path_buf(),
            config,
            force,
            log,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn stage_log(&self) -> &BTreeMap<String, StageRecord> {
        &self.log
    }

    fn save_log(&self) -> Result<()> {
        write_text(&self.path(STAGE_LOG), &serde_json::to_string_pretty(&self.log)?)
    }

    pub fn save_config(&self) -> Result<()> {
        write_text(&self.path(CONFIG_FILE), &self.config.to_text())
    }

    /// Suffix naming the graph selected by `baseline`.
    pub fn graph_suffix(&self) -> &'static str {
        match self.config.baseline {
            Baseline::None => "",
            Baseline::Phash => "-phash",
            Baseline::Embedding => "-embedding",
        }
    }

    pub fn affinity_path(&self) -> PathBuf {
        self.path(&format!("affinity{}.tsv", self.graph_suffix()))
    }

    pub fn assignment_path(&self) -> PathBuf {
        self.path(&format!("assignment{}.csv", self.graph_suffix()))
    }

    pub fn stats_path(&self) -> PathBuf {
        self.path(&format!("stats{}.txt", self.graph_suffix()))
    }

    fn fingerprint(&self, stage: &str, keys: &[&str], upstream: &[&str], extra: &[String]) -> Result<String> {
        let mut h = Sha256::new();
        h.update(stage.as_bytes());
        for k in keys {
            h.update(format!("\n{k}={}", self.config.get(k)).as_bytes());
        }
        for u in upstream {
            let rec = self
                .log
                .get(*u)
                .with_context(|| format!("stage `{u}` has not run in {}", self.dir.display()))
                .context(UsageError)?;
            h.update(format!("\n{u}:{}", rec.fingerprint).as_bytes());
        }
        for e in extra {
            h.update(format!("\n{e}").as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Runs `body` unless a previous run with the same fingerprint left all
    /// `outputs` in place.
    fn stage<F>(&mut self, name: &'static str, fingerprint: String, outputs: &[PathBuf], body: F) -> Result<Outcome>
    where
        F: FnOnce(&Self) -> Result<()>,
    {
        let fresh = self.log.get(name).is_some_and(|r| r.fingerprint == fingerprint)
            && outputs.iter().all(|p| p.exists());
        if fresh && !self.force {
            log::info!("{name}: up to date, reusing {}", outputs[0].display());
            return Ok(Outcome::Reused);
        }
        self.save_config()?;
        log::info!("{name}: running");
        let t = Instant::now();
        body(self).context(StageFailed(name))?;
        let seconds = t.elapsed().as_secs_f64();
        log::info!("{name}: done in {seconds:.1}s");
        self.log.insert(
            name.to_string(),
            StageRecord {
                fingerprint,
                seconds,
                finished_at: now(),
            },
        );
        // Downstream fingerprints chain this one, so a changed stage
        // invalidates everything after it.
        self.save_log()?;
        Ok(Outcome::Ran)
    }

    pub fn snapshot(&self) -> Result<CorpusSnapshot> {
        Ok(read_snapshot(&self.path(SNAPSHOT))?)
    }

    pub fn features(&self) -> Result<Vec<FeatureSet>> {
        Ok(read_feature_store(&self.path(FEATURES))?)
    }

    pub fn index(&self) -> Result<OpqIvfIndex> {
        Ok(read_index_file(&self.path(INDEX))?)
    }

    pub fn affinity(&self) -> Result<SparseAffinity> {
        Ok(read_affinity(&self.affinity_path())?.0)
    }

    pub fn assignment(&self) -> Result<ClusterAssignment> {
        Ok(read_assignment(&self.assignment_path())?)
    }

    pub fn ingest(&mut self) -> Result<Outcome> {
        let manifest = self
            .config
            .manifest
            .clone()
            .context("no manifest configured; pass --manifest or set manifest = ...")
            .context(UsageError)?;
        if !manifest.exists() {
            return Err(anyhow::anyhow!("manifest {} not found", manifest.display()).context(UsageError));
        }
        let root = self.config.image_root().unwrap_or_default();
        let fp = self.fingerprint("ingest", &["manifest", "image_root"], &[], &[file_digest(&manifest)?])?;
        let outputs = [self.path(SNAPSHOT), self.path(DEDUP_MAP), self.path(SKIPPED)];
        self.stage("ingest", fp, &outputs, |ws| {
            let ingested = ingest_manifest(&manifest, &root)?;
            let deduped = dedup_exact(ingested.snapshot);
            log::info!(
                "ingest: {} manifest rows, {} kept, {} skipped, {} exact duplicates",
                ingested.manifest_rows,
                deduped.snapshot.len(),
                ingested.skipped.len(),
                deduped.removed()
            );
            atomic_write(&ws.path(SNAPSHOT), |p| write_snapshot(&deduped.snapshot, p))?;
            atomic_write(&ws.path(DEDUP_MAP), |p| write_dedup_map(&deduped.old_to_new, p))?;
            let mut skipped = String::from("row,path,reason\n");
            for s in &ingested.skipped {
                skipped.push_str(&format!("{},{},{:?}\n", s.row, s.path.display(), s.reason));
            }
            write_text(&ws.path(SKIPPED), &skipped)
        })
    }

    pub fn extract(&mut self) -> Result<Outcome> {
        let fp = self.fingerprint("extract", &["max_features"], &["ingest"], &[])?;
        self.stage("extract", fp, &[self.path(FEATURES)], |ws| {
            let snapshot = ws.snapshot()?;
            let cfg = ws.config.extract();
            let mut features = Vec::with_capacity(snapshot.len());
            for chunk in snapshot.records.chunks(EXTRACT_BATCH) {
                let loaded = par::map(chunk, |r| (r.image_id, load_gray(&r.path)));
                let mut images = Vec::with_capacity(chunk.len());
                let mut failed = Vec::new();
                for (id, img) in loaded {
                    match img {
                        Ok(img) => images.push((id, img)),
                        Err(e) => {
                            log::warn!("extract: image {id} unreadable ({e}); it gets no features");
                            failed.push(id);
                        }
                    }
                }
                let mut batch = extract_batch(&images, &cfg);
                batch.extend(failed.into_iter().map(FeatureSet::empty));
                batch.sort_by_key(|f| f.image_id);
                features.extend(batch);
                log::info!("extract: {}/{} images", features.len(), snapshot.len());
            }
            let total: usize = features.iter().map(FeatureSet::len).sum();
            log::info!("extract: {total} descriptors");
            atomic_write(&ws.path(FEATURES), |p| write_feature_store(p, &features))
        })
    }

    pub fn build_index(&mut self) -> Result<Outcome> {
        let fp = self.fingerprint(
            "index",
            &["seed", "coarse_k", "subspaces", "pq_sample", "opq_iterations"],
            &["extract"],
            &[],
        )?;
        self.stage("index", fp, &[self.path(INDEX)], |ws| {
            let features = ws.features()?;
            let index = index_features(&features, &ws.config.opq(), &ws.config.index())?;
            log::info!("index: {} entries in {} lists", index.total_entries(), index.coarse_k());
            atomic_write(&ws.path(INDEX), |p| write_index_file(p, &index))
        })
    }

    pub fn build_affinity(&mut self, dump_matches: bool) -> Result<Outcome> {
        let fp = self.fingerprint(
            "affinity",
            &["seed", "knn", "nprobe", "query_fraction", "j", "ransac_iterations", "inlier_px"],
            &["index"],
            &[],
        )?;
        let mut outputs = vec![self.path("affinity.tsv"), self.path(QUERIES)];
        if dump_matches {
            outputs.push(self.path(MATCH_DUMP));
        }
        self.stage("affinity", fp, &outputs, |ws| {
            let features = ws.features()?;
            let index = ws.index()?;
            let cfg = &ws.config;
            let plan = sample_queries(features.len(), cfg.query_fraction, cfg.seed);
            let results = run_queries(&index, &features, &plan, &cfg.affinity());
            let a = affinity_from_results(features.len(), &results);
            log_graph("affinity", &a);
            let ids: String = plan.query_ids.iter().map(|q| format!("{q}\n")).collect();
            write_text(&ws.path(QUERIES), &ids)?;
            if dump_matches {
                write_text(&ws.path(MATCH_DUMP), &match_dump(&results))?;
            }
            atomic_write(&ws.path("affinity.tsv"), |p| write_affinity(p, &a, cfg.seed, cfg.j))
        })
    }

    pub fn baseline_phash(&mut self) -> Result<Outcome> {
        let fp = self.fingerprint("baseline-phash", &["phash_max_distance"], &["ingest"], &[])?;
        let outputs = [self.path(HASHES), self.path("affinity-phash.tsv")];
        self.stage("baseline-phash", fp, &outputs, |ws| {
            let snapshot = ws.snapshot()?;
            let hashes: Vec<PerceptualHash> = par::map(&snapshot.records, |r| match load_gray(&r.path) {
                Ok(g) => Ok(phash64(r.image_id, &g)),
                Err(e) => Err(e),
            })
            .into_iter()
            .collect::<memegraph::Result<_>>()?;
            let a = affinity_from_hashes(snapshot.len(), &hashes, ws.config.phash_max_distance);
            log_graph("baseline-phash", &a);
            atomic_write(&ws.path(HASHES), |p| write_hash_dump(p, &hashes))?;
            atomic_write(&ws.path("affinity-phash.tsv"), |p| {
                write_affinity(p, &a, ws.config.seed, ws.config.phash_max_distance as usize)
            })
        })
    }

    pub fn baseline_embedding(&mut self) -> Result<Outcome> {
        let file = self
            .config
            .embeddings
            .clone()
            .context("no embeddings file configured; set embeddings = path")
            .context(UsageError)?;
        let fp = self.fingerprint(
            "baseline-embedding",
            &["embeddings", "embedding_knn"],
            &["ingest"],
            &[file_digest(&file).context(UsageError)?],
        )?;
        self.stage("baseline-embedding", fp, &[self.path("affinity-embedding.tsv")], |ws| {
            let n = ws.snapshot()?.len();
            let embs = read_embeddings_file(&file)?;
            let a = affinity_from_embeddings(n, &embs, ws.config.embedding_knn)?;
            log_graph("baseline-embedding", &a);
            atomic_write(&ws.path("affinity-embedding.tsv"), |p| {
                write_affinity(p, &a, ws.config.seed, ws.config.embedding_knn)
            })
        })
    }

    pub fn baseline(&mut self) -> Result<Option<Outcome>> {
        Ok(match self.config.baseline {
            Baseline::None => None,
            Baseline::Phash => Some(self.baseline_phash()?),
            Baseline::Embedding => Some(self.baseline_embedding()?),
        })
    }

    fn graph_stage(&self) -> &'static str {
        match self.config.baseline {
            Baseline::None => "affinity",
            Baseline::Phash => "baseline-phash",
            Baseline::Embedding => "baseline-embedding",
        }
    }

    pub fn cluster(&mut self) -> Result<Outcome> {
        let stage: &'static str = match self.config.baseline {
            Baseline::None => "cluster",
            Baseline::Phash => "cluster-phash",
            Baseline::Embedding => "cluster-embedding",
        };
        let fp = self.fingerprint(stage, &["k", "restarts", "seed", "baseline"], &[self.graph_stage()], &[])?;
        let outputs = [self.assignment_path(), self.stats_path()];
        self.stage(stage, fp, &outputs, |ws| {
            let a = ws.affinity()?;
            let k = ws.config.k;
            let assignment = match ws.config.baseline {
                Baseline::None => spectral_cluster(&a, k, ws.config.restarts, ws.config.seed)?,
                // Baseline graphs can be nearly edgeless; see the capped variant.
                _ => spectral_cluster_capped(&a, k, ws.config.restarts, ws.config.seed)?,
            };
            if !assignment.empty_clusters.is_empty() {
                log::warn!("cluster: {} empty clusters: {:?}", assignment.empty_clusters.len(), assignment.empty_clusters);
            }
            let stats = format_stats(&cluster_stats(&assignment));
            log::info!("cluster: stats\n{stats}");
            atomic_write(&ws.assignment_path(), |p| write_assignment(p, &assignment))?;
            write_text(&ws.stats_path(), &stats)
        })
    }

    pub fn eval_gen(&mut self) -> Result<Outcome> {
        let stage: &'static str = "eval-gen";
        let graph_cluster = match self.config.baseline {
            Baseline::None => "cluster",
            Baseline::Phash => "cluster-phash",
            Baseline::Embedding => "cluster-embedding",
        };
        let fp = self.fingerprint(stage, &["tasks_per_cluster", "control_pool", "seed"], &[graph_cluster], &[])?;
        self.stage(stage, fp, &[self.path(TASKS), self.path(TASK_SKIPS)], |ws| {
            let assignment = ws.assignment()?;
            let set = generate_tasks(&assignment, ws.config.tasks_per_cluster, ws.config.seed)?;
            let mut tasks = set.tasks;
            let n_regular = tasks.len();
            tasks.extend(control_tasks(&assignment, ws.config.control_pool, ws.config.seed)?);
            log::info!(
                "eval-gen: {n_regular} tasks, {} controls, {} clusters too small",
                ws.config.control_pool,
                set.skipped_clusters.len()
            );
            atomic_write(&ws.path(TASKS), |p| write_tasks(p, &tasks))?;
            let mut skips = String::from("cluster,size\n");
            for (c, s) in &set.skipped_clusters {
                skips.push_str(&format!("{c},{s}\n"));
            }
            write_text(&ws.path(TASK_SKIPS), &skips)
        })
    }

    /// Per-stage wall time from the log, for stages that have run.
    pub fn stage_seconds(&self, stage: &str) -> Option<f64> {
        self.log.get(stage).map(|r| r.seconds)
    }
}

fn log_graph(stage: &str, a: &SparseAffinity) {
    let comps = connected_components(a);
    log::info!(
        "{stage}: {} edges over {} active nodes; largest component {} ({:.1}% of active nodes)",
        a.edge_count(),
        a.active_nodes().len(),
        comps.first().copied().unwrap_or(0),
        100.0 * largest_component_coverage(a).unwrap_or(0.0)
    );
}

#[derive(Serialize)]
struct DumpRecord {
    query: u32,
    candidate: u32,
    inliers: u32,
    scale: Option<f32>,
    rotation: Option<f32>,
    tx: Option<f32>,
    ty: Option<f32>,
}

/// One line per verified (query, candidate) pair.
fn match_dump(results: &[QueryResult]) -> String {
    let mut out = String::new();
    for r in results {
        for s in &r.scores {
            let t = s.transform;
            let rec = DumpRecord {
                query: r.query_id,
                candidate: s.image_id,
                inliers: s.score,
                scale: t.map(|t| t.scale),
                rotation: t.map(|t| t.rotation),
                tx: t.map(|t| t.tx),
                ty: t.map(|t| t.ty),
            };
            out.push_str(&serde_json::to_string(&rec).expect("plain record"));
            out.push('\n');
        }
    }
    out
}

/// Appends one line to a text file, creating it if needed.
pub fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(format!("{line}\n").as_bytes())?;
    Ok(())
}

/// Fails unless every listed artifact exists.
pub fn require(paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            bail!("missing {}; run the stage that produces it first", p.display());
        }
    }
    Ok(())
}
