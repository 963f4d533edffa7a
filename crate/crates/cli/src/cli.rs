//! Command-line surface and dispatch.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use memegraph::corpus::CorpusSnapshot;
use memegraph::eval::{read_responses, read_tasks};
use memegraph::metrics::purity;
use memegraph::spectral::{cluster_stats, spectral_cluster, ClusterAssignment};
use memegraph::synth::{generate_genre_corpus, write_corpus, GenreConfig};

use crate::config::{Baseline, RunConfig};
use crate::report::{build_report, render_html, DEFAULT_TOP};
use crate::serve::{self, report_from_log, ServeInputs};
use crate::stages::{self, write_text, Outcome, StageFailed, UsageError, Workspace};

/// Thread-count override for the data-parallel stages.
pub const THREADS_ENV: &str = "MEMEGRAPH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "memegraph", version, about = "Discover image genres by local-feature matching and spectral clustering")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Directory holding every artifact of a run.
    #[arg(short = 'w', long, global = true, default_value = "memegraph-run")]
    pub work_dir: PathBuf,
    /// key = value configuration file. Defaults to the work directory's
    /// run.conf when one exists.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set k=20`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Shorthand for `--set manifest=PATH`.
    #[arg(short, long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Re-run stages even when their inputs are unchanged.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Phash,
    Embedding,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic genre corpus (PNG files plus manifest).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        genres: usize,
        #[arg(long, default_value_t = 25)]
        per_genre: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Load the manifest, hash and deduplicate images, write the snapshot.
    Ingest,
    /// Extract local features for every image.
    Extract,
    /// Train OPQ and build the inverted-file index.
    Index,
    /// Sample queries, match them and build the affinity graph.
    Affinity {
        /// Also write every verified (query, candidate) pair to matches.jsonl.
        #[arg(long)]
        dump_matches: bool,
    },
    /// Spectral clustering of the graph selected by `baseline`.
    Cluster,
    /// Build a baseline affinity graph and cluster it.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
    },
    /// Every stage from ingest to report.
    Run {
        /// Also write every verified (query, candidate) pair to matches.jsonl.
        #[arg(long)]
        dump_matches: bool,
    },
    /// Cluster statistics for several K over one affinity graph.
    Ksweep {
        /// Comma-separated K values.
        #[arg(long, value_delimiter = ',', default_values_t = [10usize, 20, 50, 100, 140])]
        k: Vec<usize>,
    },
    /// Compare clusterings of every graph present in the work directory.
    Compare,
    /// HTML and JSON report of the clusters with exemplar images.
    Report {
        #[arg(long, default_value_t = DEFAULT_TOP)]
        top: usize,
    },
    /// Generate impostor-host tasks and a control pool.
    EvalGen,
    /// Serve tasks to annotators and collect responses over HTTP.
    EvalServe {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Score a response log against the generated tasks.
    EvalScore {
        /// Response log; defaults to the work directory's responses.csv.
        #[arg(long)]
        responses: Option<PathBuf>,
    },
}

/// Entry point shared by the binary: parses, dispatches and maps errors to
/// exit codes (1 usage, 2 stage failure).
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<StageFailed>().is_some() {
        2
    } else if e.downcast_ref::<UsageError>().is_some() {
        1
    } else {
        2
    }
}

/// Resolves the configuration: explicit file, else the work directory's
/// run.conf, else defaults; then `--manifest` and `--set` overrides.
pub fn resolve_config(g: &Global) -> Result<RunConfig> {
    let stored = g.work_dir.join(stages::CONFIG_FILE);
    let mut cfg = match (&g.config, stored.exists()) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, true) => RunConfig::load(&stored)?,
        (None, false) => RunConfig::default(),
    };
    if let Some(m) = &g.manifest {
        cfg.manifest = Some(m.clone());
    }
    cfg.apply_overrides(&g.overrides)?;
    Ok(cfg)
}

pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))
            .context(UsageError)?;
        if !memegraph::par::set_global_threads(n) {
            log::warn!("{THREADS_ENV}={n} ignored: thread pool already running or built without `parallel`");
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    if let Command::Synth {
        out,
        genres,
        per_genre,
        seed,
    } = &cli.command
    {
        return synth(out, *genres, *per_genre, *seed);
    }
    let cfg = resolve_config(&cli.global).context(UsageError)?;
    let mut ws = Workspace::open(&cli.global.work_dir, cfg, cli.global.force)?;
    match cli.command {
        Command::Synth { .. } => unreachable!("handled above"),
        Command::Ingest => ws.ingest().map(drop),
        Command::Extract => ws.extract().map(drop),
        Command::Index => ws.build_index().map(drop),
        Command::Affinity { dump_matches } => ws.build_affinity(dump_matches).map(drop),
        Command::Cluster => ws.cluster().map(drop),
        Command::Baseline { kind } => {
            let b = match kind {
                BaselineKind::Phash => Baseline::Phash,
                BaselineKind::Embedding => Baseline::Embedding,
            };
            with_graph(&mut ws, b, |ws| {
                ws.baseline()?;
                ws.cluster().map(drop)
            })
        }
        Command::Run { dump_matches } => run_all(&mut ws, dump_matches),
        Command::Ksweep { k } => ksweep(&ws, &k),
        Command::Compare => compare(&mut ws),
        Command::Report { top } => report(&ws, top),
        Command::EvalGen => ws.eval_gen().map(drop),
        Command::EvalServe { addr } => eval_serve(&ws, &addr),
        Command::EvalScore { responses } => eval_score(&ws, responses),
    }
}

/// Runs `f` against another graph without making it the stored default.
fn with_graph<R>(ws: &mut Workspace, graph: Baseline, f: impl FnOnce(&mut Workspace) -> Result<R>) -> Result<R> {
    let original = ws.config.baseline;
    ws.config.baseline = graph;
    let out = f(ws);
    ws.config.baseline = original;
    if ws.path(stages::CONFIG_FILE).exists() {
        ws.save_config()?;
    }
    out
}

fn synth(out: &Path, genres: usize, per_genre: usize, seed: u64) -> Result<()> {
    if genres < 2 || per_genre < 1 {
        return Err(anyhow::anyhow!("need at least 2 genres and 1 image per genre").context(UsageError));
    }
    let corpus = generate_genre_corpus(&GenreConfig {
        genres,
        per_genre,
        seed,
        ..GenreConfig::default()
    });
    let manifest = write_corpus(out, &corpus)?;
    println!("{}", manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct RunMeta {
    memegraph_version: &'static str,
    parallel: bool,
    threads: usize,
    config: String,
    images: usize,
    /// Seconds per stage, from this run or the run that produced the reused
    /// artifact.
    stage_seconds: BTreeMap<String, f64>,
    reused_stages: Vec<String>,
    images_per_hour: Option<f64>,
}

pub fn run_all(ws: &mut Workspace, dump_matches: bool) -> Result<()> {
    let mut outcomes: Vec<(&str, Outcome)> = vec![
        ("ingest", ws.ingest()?),
        ("extract", ws.extract()?),
        ("index", ws.build_index()?),
        ("affinity", ws.build_affinity(dump_matches)?),
    ];
    let graph_stage = match ws.config.baseline {
        Baseline::None => None,
        Baseline::Phash => Some("baseline-phash"),
        Baseline::Embedding => Some("baseline-embedding"),
    };
    if let (Some(name), Some(o)) = (graph_stage, ws.baseline()?) {
        outcomes.push((name, o));
    }
    let cluster_stage = match ws.config.baseline {
        Baseline::None => "cluster",
        Baseline::Phash => "cluster-phash",
        Baseline::Embedding => "cluster-embedding",
    };
    outcomes.push((cluster_stage, ws.cluster()?));
    report(ws, DEFAULT_TOP)?;

    let images = ws.snapshot()?.len();
    let stage_seconds: BTreeMap<String, f64> = outcomes
        .iter()
        .filter_map(|(s, _)| ws.stage_seconds(s).map(|t| (s.to_string(), t)))
        .collect();
    let processing: f64 = ["extract", "index", "affinity", cluster_stage]
        .iter()
        .filter_map(|s| stage_seconds.get(*s))
        .sum();
    let images_per_hour = (processing > 0.0).then(|| images as f64 * 3600.0 / processing);
    if let Some(rate) = images_per_hour {
        log::info!("throughput: {rate:.0} images/hour ({images} images in {processing:.1}s)");
    }
    let meta = RunMeta {
        memegraph_version: env!("CARGO_PKG_VERSION"),
        parallel: memegraph::par::PARALLEL,
        threads: memegraph::par::current_num_threads(),
        config: ws.config.to_text(),
        images,
        stage_seconds,
        reused_stages: outcomes
            .iter()
            .filter(|(_, o)| *o == Outcome::Reused)
            .map(|(s, _)| s.to_string())
            .collect(),
        images_per_hour,
    };
    write_text(&ws.path(stages::RUN_META), &serde_json::to_string_pretty(&meta)?)?;
    println!("{}", ws.stats_path().display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub status: String,
    pub clusters: usize,
    pub min: usize,
    pub median: f64,
    pub max: usize,
    pub overflow: usize,
    pub empty: usize,
}

pub fn sweep_rows(a: &memegraph::affinity::SparseAffinity, ks: &[usize], restarts: usize, seed: u64) -> Result<Vec<SweepRow>> {
    let n_active = a.active_nodes().len();
    let mut rows = Vec::new();
    for &k in ks {
        if k == 0 || k > n_active {
            log::warn!("ksweep: K = {k} skipped, graph has {n_active} active nodes");
            rows.push(SweepRow {
                k,
                status: format!("skipped: {n_active} active nodes"),
                clusters: 0,
                min: 0,
                median: 0.0,
                max: 0,
                overflow: 0,
                empty: 0,
            });
            continue;
        }
        let s = cluster_stats(&spectral_cluster(a, k, restarts, seed)?);
        rows.push(SweepRow {
            k,
            status: "ok".into(),
            clusters: s.sizes.len(),
            min: s.min,
            median: s.median,
            max: s.max,
            overflow: s.overflow,
            empty: s.empty,
        });
    }
    Ok(rows)
}

fn ksweep(ws: &Workspace, ks: &[usize]) -> Result<()> {
    let a = ws.affinity().context(StageFailed("ksweep"))?;
    let rows = sweep_rows(&a, ks, ws.config.restarts, ws.config.seed).context(StageFailed("ksweep"))?;
    let mut csv = String::from("k,status,clusters,min,median,max,overflow,empty\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.k, r.status, r.clusters, r.min, r.median, r.max, r.overflow, r.empty
        ));
    }
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.status == "ok").collect();
    let plot = serde_json::json!({
        "k": ok.iter().map(|r| r.k).collect::<Vec<_>>(),
        "min": ok.iter().map(|r| r.min).collect::<Vec<_>>(),
        "median": ok.iter().map(|r| r.median).collect::<Vec<_>>(),
        "max": ok.iter().map(|r| r.max).collect::<Vec<_>>(),
        "rows": rows,
    });
    let suffix = ws.graph_suffix();
    write_text(&ws.path(&format!("ksweep{suffix}.csv")), &csv)?;
    write_text(&ws.path(&format!("ksweep{suffix}.json")), &serde_json::to_string_pretty(&plot)?)?;
    print!("{csv}");
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphComparison {
    pub graph: String,
    pub edges: usize,
    pub active_nodes: usize,
    /// Largest cluster, the unclustered overflow included, over all images.
    pub largest_share: f64,
    pub median_size: f64,
    /// Purity against source tags, when the manifest carried them.
    pub tag_purity: Option<f64>,
}

/// Labels from source tags, or `None` if any image is untagged.
pub fn tag_labels(snapshot: &CorpusSnapshot) -> Option<Vec<u32>> {
    let mut ids: BTreeMap<&str, u32> = BTreeMap::new();
    snapshot
        .records
        .iter()
        .map(|r| {
            let tag = r.source_tag.as_deref()?;
            let next = ids.len() as u32;
            Some(*ids.entry(tag).or_insert(next))
        })
        .collect()
}

pub fn compare_assignment(
    graph: &str,
    a: &memegraph::affinity::SparseAffinity,
    c: &ClusterAssignment,
    tags: Option<&[u32]>,
) -> GraphComparison {
    let sizes = c.sizes();
    let n = c.assignments.len().max(1) as f64;
    GraphComparison {
        graph: graph.to_string(),
        edges: a.edge_count(),
        active_nodes: a.active_nodes().len(),
        largest_share: sizes.iter().copied().max().unwrap_or(0) as f64 / n,
        median_size: cluster_stats(c).median,
        tag_purity: tags.map(|t| purity(&c.assignments, t)),
    }
}

fn compare(ws: &mut Workspace) -> Result<()> {
    let snapshot = ws.snapshot()?;
    let tags = tag_labels(&snapshot);
    let mut rows = Vec::new();
    for b in [Baseline::None, Baseline::Phash, Baseline::Embedding] {
        let row = with_graph(ws, b, |ws| {
            if !ws.affinity_path().exists() {
                return Ok(None);
            }
            ws.cluster()?;
            let name = if b == Baseline::None { "mgd" } else { b.as_str() };
            Ok(Some(compare_assignment(name, &ws.affinity()?, &ws.assignment()?, tags.as_deref())))
        })?;
        rows.extend(row);
    }
    if rows.is_empty() {
        return Err(anyhow::anyhow!("no affinity graphs in {}; run `affinity` or `baseline` first", ws.dir.display())
            .context(UsageError));
    }
    println!("graph\tedges\tactive\tlargest_share\tmedian_size\ttag_purity");
    for r in &rows {
        println!(
            "{}\t{}\t{}\t{:.3}\t{}\t{}",
            r.graph,
            r.edges,
            r.active_nodes,
            r.largest_share,
            r.median_size,
            r.tag_purity.map_or("-".into(), |p| format!("{p:.3}"))
        );
    }
    write_text(&ws.path("comparison.json"), &serde_json::to_string_pretty(&rows)?)
}

fn report(ws: &Workspace, top: usize) -> Result<()> {
    let r = (|| -> Result<_> {
        let assignment = ws.assignment()?;
        let snapshot = ws.snapshot()?;
        let a = ws.affinity()?;
        Ok(build_report(&assignment, &snapshot, &a, top))
    })()
    .context(StageFailed("report"))?;
    let suffix = ws.graph_suffix();
    write_text(&ws.path(&format!("report{suffix}.json")), &serde_json::to_string_pretty(&r)?)?;
    write_text(&ws.path(&format!("report{suffix}.html")), &render_html(&r))?;
    Ok(())
}

pub fn serve_inputs(ws: &Workspace) -> Result<ServeInputs> {
    stages::require(&[ws.path(stages::TASKS), ws.assignment_path(), ws.path(stages::SNAPSHOT)]).context(UsageError)?;
    Ok(ServeInputs {
        tasks: read_tasks(&ws.path(stages::TASKS))?,
        assignment: ws.assignment()?,
        images: ws.snapshot()?.records.into_iter().map(|r| r.path).collect(),
        responses_path: ws.path(stages::RESPONSES),
        sessions_path: ws.path("sessions.jsonl"),
        seed: ws.config.seed,
    })
}

fn eval_serve(ws: &Workspace, addr: &str) -> Result<()> {
    let state = serve::new_state(serve_inputs(ws)?)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve::serve(state, addr))
}

fn eval_score(ws: &Workspace, responses: Option<PathBuf>) -> Result<()> {
    let path = responses.unwrap_or_else(|| ws.path(stages::RESPONSES));
    stages::require(&[ws.path(stages::TASKS), ws.assignment_path(), path.clone()]).context(UsageError)?;
    let tasks = read_tasks(&ws.path(stages::TASKS))?;
    let log = read_responses(&path)?;
    let view = report_from_log(&tasks, &log, &ws.assignment()?);
    let r = &view.report;
    let pct = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{:.2}%", 100.0 * x));
    println!("annotators: {} qualified, {} discarded", view.qualified.len(), view.discarded.len());
    println!("responses: {} scored, {} ignored", r.responses_scored, r.responses_ignored);
    println!("average accuracy: {}", pct(r.avg_accuracy));
    println!("normalized average accuracy: {}", pct(r.normalized_avg_accuracy));
    println!("normalized delta: {}", pct(r.normalized_delta));
    if r.responses_scored == 0 {
        bail!("no qualified responses to score");
    }
    write_text(&ws.path("eval_report.json"), &serde_json::to_string_pretty(&view)?)
}
