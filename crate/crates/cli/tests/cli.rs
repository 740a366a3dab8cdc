use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use treetune::bench::BenchReport;
use treetune::dataset::save_vectors;
use treetune::fixture::{gaussian_mixture, standard_fixture, MixtureSpec};
use treetune::{DataMatrix, GroundTruth, VectorFormat};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_treetune"));
    cmd.env_remove("TREETUNE_THREADS");
    cmd
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn mixture(n: usize, d: usize, seed: u64) -> DataMatrix {
    gaussian_mixture(&MixtureSpec {
        n,
        d,
        clusters: 4,
        intrinsic: 4,
        seed,
        ..MixtureSpec::standard(0)
    })
    .unwrap()
}

fn write(dir: &Path, name: &str, data: &DataMatrix) -> PathBuf {
    let path = dir.join(name);
    save_vectors(data, &path, VectorFormat::from_path(&path).unwrap()).unwrap();
    path
}

/// A small corpus, validation and test queries, and test ground truth.
struct Small {
    dir: TempDir,
}

impl Small {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let corpus = mixture(2000, 16, 1);
        write(dir.path(), "corpus.fvecs", &corpus);
        write(dir.path(), "validation.fvecs", &mixture(60, 16, 2));
        let test = mixture(60, 16, 3);
        write(dir.path(), "test.fvecs", &test);
        GroundTruth::compute(&corpus, &test, 10)
            .unwrap()
            .save_csv(dir.path().join("truth.csv"))
            .unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }
}

#[test]
fn groundtruth_shape_determinism_and_bad_k() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    write(p, "data.fvecs", &mixture(100, 8, 5));
    write(p, "q.csv", &mixture(10, 8, 6));
    let args = ["groundtruth", "--data", "data.fvecs", "--queries", "q.csv", "--k", "5"];
    ok(p, &[&args[..], &["--out", "a.csv"]].concat());
    ok(p, &[&args[..], &["--out", "b.csv"]].concat());
    let a = std::fs::read(p.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.csv")).unwrap());
    let truth = GroundTruth::load_csv(p.join("a.csv")).unwrap();
    assert_eq!((truth.len(), truth.k), (10, 5));

    let json = ok(p, &[&args[..], &["--format", "json"]].concat());
    let parsed: GroundTruth = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(parsed, truth);

    let bad = run(p, &["groundtruth", "--data", "data.fvecs", "--queries", "q.csv", "--k", "0"]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn usage_errors_exit_two() {
    let s = Small::new();
    let p = s.path();
    for args in [
        &["groundtruth", "--queries", "test.fvecs", "--k", "3"][..],
        &["groundtruth", "--data", "corpus.fvecs", "--queries", "test.fvecs", "--k", "3", "--format", "xml"],
        &["build", "--data", "corpus.fvecs", "--tree", "ball", "--out", "x.bin"],
        &["autotune", "--data", "corpus.fvecs", "--queries", "validation.fvecs", "--target", "speed=3"],
        &["autotune", "--data", "corpus.fvecs", "--queries", "validation.fvecs", "--target", "recall=0.8", "--lmin", "9", "--lmax", "4"],
        &["bench", "--data", "corpus.fvecs", "--queries", "test.fvecs", "--grid", "trees=0"],
        &["no-such-verb"],
    ] {
        assert_eq!(code(&run(p, args)), 2, "{args:?}");
    }
    let zero_threads = bin()
        .current_dir(p)
        .env("TREETUNE_THREADS", "0")
        .args(["inspect", "--index", "x.bin"])
        .output()
        .unwrap();
    assert_eq!(code(&zero_threads), 2);
}

#[test]
fn autotune_meets_recall_target_on_the_fixture() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let fx = standard_fixture();
    write(p, "corpus.fvecs", &fx.corpus);
    let rows: Vec<usize> = (0..100).collect();
    write(p, "validation.fvecs", &fx.queries.select(&rows).unwrap());
    let out = ok(
        p,
        &[
            "autotune", "--data", "corpus.fvecs", "--queries", "validation.fvecs", "--tree", "rp", "--target",
            "recall=0.8", "--tmax", "16", "--out", "index.bin", "--report", "report.json",
        ],
    );
    assert!(stdout(&out).contains("selected rp"), "{}", stdout(&out));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
    let sel = &report["selected"];
    assert!(sel["est_recall"].as_f64().unwrap() >= 0.8);
    assert_eq!(report["target_met"], Value::Bool(true));
    assert!(report["warning"].is_null());
    assert!(sel["trees"].as_u64().unwrap() <= 16);

    let inspect = ok(p, &["inspect", "--index", "index.bin", "--data", "corpus.fvecs", "--format", "json"]);
    let info: Value = serde_json::from_str(&stdout(&inspect)).unwrap();
    assert_eq!(info["magic"], "TTFOREST");
    assert_eq!(info["trees"], sel["trees"]);
    assert_eq!(info["depth"], sel["depth"]);
    assert_eq!(info["corpus_matches"], Value::Bool(true));
}

#[test]
fn autotune_is_deterministic_given_seed_and_model() {
    let s = Small::new();
    let p = s.path();
    let base = [
        "autotune", "--data", "corpus.fvecs", "--queries", "validation.fvecs", "--tree", "rkd", "--target",
        "recall=0.7", "--tmax", "8", "--seed", "7",
    ];
    ok(p, &[&base[..], &["--report", "first.json", "--out", "first.bin"]].concat());
    ok(
        p,
        &[&base[..], &["--model", "first.json", "--report", "second.json", "--out", "second.bin"]].concat(),
    );
    let first: Value = serde_json::from_str(&std::fs::read_to_string(p.join("first.json")).unwrap()).unwrap();
    let second: Value = serde_json::from_str(&std::fs::read_to_string(p.join("second.json")).unwrap()).unwrap();
    assert_eq!(first["selected"], second["selected"]);
    assert_eq!(first["recall_grid"], second["recall_grid"]);
    assert_eq!(
        std::fs::read(p.join("first.bin")).unwrap(),
        std::fs::read(p.join("second.bin")).unwrap()
    );
}

#[test]
fn unmet_recall_target_warns_and_succeeds() {
    let s = Small::new();
    let p = s.path();
    let out = ok(
        p,
        &[
            "autotune", "--data", "corpus.fvecs", "--queries", "validation.fvecs", "--target", "recall=0.9999",
            "--tmax", "2", "--report", "report.json",
        ],
    );
    assert!(stderr(&out).contains("warning"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["target_met"], Value::Bool(false));
    assert!(report["warning"].is_string());
}

#[test]
fn query_finds_corpus_points_and_reports_recall() {
    let s = Small::new();
    let p = s.path();
    ok(p, &["build", "--data", "corpus.fvecs", "--tree", "pca", "--trees", "4", "--depth", "5", "--out", "f.bin"]);

    // Corpus rows as queries: each is its own nearest neighbor.
    let out = ok(p, &["query", "--index", "f.bin", "--data", "corpus.fvecs", "--queries", "corpus.fvecs", "--k", "1"]);
    let firsts: Vec<u32> = stdout(&out).lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(firsts.len(), 2000);
    assert!(firsts.iter().enumerate().all(|(i, &f)| f as usize == i));

    let out = ok(
        p,
        &["query", "--index", "f.bin", "--data", "corpus.fvecs", "--queries", "test.fvecs", "--truth", "truth.csv"],
    );
    let err = stderr(&out);
    let line = err.lines().find(|l| l.starts_with("recall@10: ")).expect("recall line");
    let value = line.trim_start_matches("recall@10: ");
    assert_eq!(value.split('.').nth(1).map(str::len), Some(3), "{line}");
    let r: f64 = value.parse().unwrap();
    assert!((0.0..=1.0).contains(&r));
    assert!(err.contains("median of 3 passes"));

    let pq = ok(
        p,
        &[
            "query", "--index", "f.bin", "--data", "corpus.fvecs", "--queries", "test.fvecs", "--branches", "8",
            "--format", "json",
        ],
    );
    let rows: Vec<Vec<u32>> = serde_json::from_str(&stdout(&pq)).unwrap();
    assert_eq!(rows.len(), 60);
    assert!(rows.iter().all(|r| r.len() <= 10));
}

#[test]
fn query_rejects_a_different_corpus() {
    let s = Small::new();
    let p = s.path();
    ok(p, &["build", "--data", "corpus.fvecs", "--trees", "2", "--out", "f.bin"]);
    write(p, "other.fvecs", &mixture(2000, 16, 99));
    let out = run(p, &["query", "--index", "f.bin", "--data", "other.fvecs", "--queries", "test.fvecs"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("checksum"));
    let out = run(p, &["inspect", "--index", "truth.csv"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn bench_rows_round_trip() {
    let s = Small::new();
    let p = s.path();
    let out = ok(
        p,
        &[
            "bench", "--data", "corpus.fvecs", "--queries", "test.fvecs", "--truth", "truth.csv", "--grid",
            "tree=rkd;trees=4;depth=6;votes=1",
        ],
    );
    let report = BenchReport::read_csv(stdout(&out).as_bytes()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!((report.rows[0].trees, report.rows[0].depth, report.rows[0].param), (4, 6, 1));

    ok(
        p,
        &[
            "bench", "--data", "corpus.fvecs", "--queries", "test.fvecs", "--grid",
            "tree=rp,pca;trees=2,4;depth=6;votes=1;branches=3", "--format", "json", "--out", "bench.json",
            "--target", "recall=0.6", "--validation", "validation.fvecs", "--tmax", "8",
        ],
    );
    let report: BenchReport = serde_json::from_str(&std::fs::read_to_string(p.join("bench.json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 2 * 2 * 2 + 2);
    assert_eq!(report.rows.iter().filter(|r| r.strategy == "autotuned").count(), 2);
    assert!(report.rows.windows(2).all(|w| w[0].recall <= w[1].recall));
}

#[test]
fn run_file_supplies_flags() {
    let s = Small::new();
    let p = s.path();
    std::fs::write(
        p.join("run.toml"),
        "data = \"corpus.fvecs\"\nk = 4\n[groundtruth]\nqueries = \"test.fvecs\"\nout = \"gt.csv\"\n",
    )
    .unwrap();
    ok(p, &["groundtruth", "--config", "run.toml"]);
    assert_eq!(GroundTruth::load_csv(p.join("gt.csv")).unwrap().k, 4);
    ok(p, &["groundtruth", "--config", "run.toml", "--k", "2"]);
    assert_eq!(GroundTruth::load_csv(p.join("gt.csv")).unwrap().k, 2);

    std::fs::write(p.join("bad.toml"), "k = \"four\"\n").unwrap();
    assert_eq!(code(&run(p, &["groundtruth", "--config", "bad.toml"])), 2);
}

#[test]
fn thread_count_from_environment() {
    let s = Small::new();
    let p = s.path();
    let out = bin()
        .current_dir(p)
        .env("TREETUNE_THREADS", "2")
        .args(["groundtruth", "--data", "corpus.fvecs", "--queries", "test.fvecs", "--k", "10"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let truth = GroundTruth::read_csv(&out.stdout[..]).unwrap();
    assert_eq!(truth, GroundTruth::load_csv(p.join("truth.csv")).unwrap());
}

#[test]
fn fixture_and_split_write_consistent_files() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    ok(p, &["fixture", "--out", "fx.f32", "--queries", "fxq.f32"]);
    let fx = standard_fixture();
    let corpus = treetune::dataset::load_vectors(p.join("fx.f32"), VectorFormat::RawF32).unwrap();
    assert_eq!(corpus, fx.corpus);

    ok(p, &["split", "--data", "fxq.f32", "--validation", "50", "--test", "30", "--out", "parts", "--seed", "3"]);
    let sizes: Vec<usize> = ["corpus", "validation", "test"]
        .iter()
        .map(|n| {
            treetune::dataset::load_vectors(p.join(format!("parts/{n}.f32")), VectorFormat::RawF32)
                .unwrap()
                .n()
        })
        .collect();
    assert_eq!(sizes, vec![920, 50, 30]);
}
