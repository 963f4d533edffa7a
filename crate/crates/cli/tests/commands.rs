//! End-to-end runs of the `memegraph` binary on a small synthetic corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use memegraph::eval::{read_tasks, write_responses, ImpostorTask, Response};

const SMALL: &[&str] = &[
    "-s",
    "coarse_k=64",
    "-s",
    "pq_sample=8192",
    "-s",
    "opq_iterations=3",
    "-s",
    "query_fraction=0.5",
    "-s",
    "k=4",
    "-s",
    "seed=3",
];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_memegraph"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn synth(dir: &Path) -> PathBuf {
    let out = dir.join("corpus");
    let o = run(&["synth", "--out", out.to_str().unwrap(), "--genres", "4", "--per-genre", "5", "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join("manifest.csv")
}

fn pipeline(work: &Path, manifest: &Path, steps: &[&[&str]]) {
    for step in steps {
        let mut args = vec!["-w", work.to_str().unwrap(), "-m", manifest.to_str().unwrap()];
        args.extend_from_slice(SMALL);
        args.extend_from_slice(step);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{step:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

fn read(path: PathBuf) -> Vec<u8> {
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["ksweep", "--k", "x"])), 1);

    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w");
    // Downstream stage before its inputs exist.
    let o = run(&["-w", w.to_str().unwrap(), "cluster"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("has not run"));
    // Unknown configuration key.
    assert_eq!(code(&run(&["-w", w.to_str().unwrap(), "-s", "bogus=1", "ingest"])), 1);
    // Missing manifest.
    assert_eq!(code(&run(&["-w", w.to_str().unwrap(), "ingest"])), 1);
}

#[test]
fn stage_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.csv");
    std::fs::write(&manifest, "path,source_tag\n").unwrap();
    let w = dir.path().join("w");
    let o = run(&["-w", w.to_str().unwrap(), "-m", manifest.to_str().unwrap(), "ingest"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `ingest` failed"));
}

#[test]
fn resumed_pipeline_matches_a_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let once = dir.path().join("once");
    let staged = dir.path().join("staged");
    pipeline(&once, &manifest, &[&["run"]]);
    pipeline(
        &staged,
        &manifest,
        &[&["ingest"], &["extract"], &["index"], &["affinity"], &["cluster"], &["report"]],
    );
    for f in ["assignment.csv", "affinity.tsv", "queries.txt", "stats.txt", "report.json"] {
        assert_eq!(read(once.join(f)), read(staged.join(f)), "{f} differs");
    }

    // A second run reuses every stage and leaves the outputs untouched.
    let before = read(once.join("assignment.csv"));
    pipeline(&once, &manifest, &[&["run"]]);
    assert_eq!(read(once.join("assignment.csv")), before);
    let meta: serde_json::Value = serde_json::from_slice(&read(once.join("run_meta.json"))).unwrap();
    assert_eq!(meta["reused_stages"].as_array().unwrap().len(), 5);
    assert_eq!(meta["images"], 20);

    // Changing a clustering key reruns clustering only.
    pipeline(&once, &manifest, &[&["-s", "k=3", "run"]]);
    let meta: serde_json::Value = serde_json::from_slice(&read(once.join("run_meta.json"))).unwrap();
    let reused: Vec<&str> = meta["reused_stages"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(reused, ["ingest", "extract", "index", "affinity"]);
}

#[test]
fn analysis_commands_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let w = dir.path().join("w");
    pipeline(
        &w,
        &manifest,
        &[
            &["run", "--dump-matches"],
            &["ksweep", "--k", "2,4,500"],
            &["baseline", "--kind", "phash"],
            &["compare"],
            &["-s", "tasks_per_cluster=10", "-s", "control_pool=6", "eval-gen"],
        ],
    );
    for f in [
        "matches.jsonl",
        "ksweep.csv",
        "ksweep.json",
        "hashes.csv",
        "affinity-phash.tsv",
        "assignment-phash.csv",
        "comparison.json",
        "tasks.tsv",
        "report.html",
    ] {
        assert!(w.join(f).exists(), "missing {f}");
    }
    let sweep = String::from_utf8(read(w.join("ksweep.csv"))).unwrap();
    assert!(sweep.lines().any(|l| l.starts_with("500,skipped")));
    // The baseline command does not change the default graph.
    let conf = String::from_utf8(read(w.join("run.conf"))).unwrap();
    assert!(conf.contains("baseline = none"));
    let rows: serde_json::Value = serde_json::from_slice(&read(w.join("comparison.json"))).unwrap();
    let graphs: Vec<&str> = rows.as_array().unwrap().iter().map(|r| r["graph"].as_str().unwrap()).collect();
    assert_eq!(graphs, ["mgd", "phash"]);

    // Score a log of perfect answers.
    let tasks = read_tasks(&w.join("tasks.tsv")).unwrap();
    let (controls, regular): (Vec<ImpostorTask>, Vec<ImpostorTask>) = tasks.into_iter().partition(|t| t.is_control);
    let responses: Vec<Response> = regular
        .iter()
        .take(20)
        .chain(controls.iter().take(5))
        .map(|t| Response {
            annotator_id: "a".into(),
            task_id: t.task_id,
            chosen_position: t.impostor_position,
            timestamp: 0,
        })
        .collect();
    let log = dir.path().join("log.csv");
    write_responses(&log, &responses).unwrap();
    let o = run(&["-w", w.to_str().unwrap(), "eval-score", "--responses", log.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("average accuracy: 100.00%"));
}
