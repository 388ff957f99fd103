use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rsir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsir"))
        .args(args)
        .env("RSIR_WORKERS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rsir(args);
    assert!(
        out.status.success(),
        "rsir {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small dataset plus a codebook under `root`.
fn prepared(root: &Path) {
    let data = root.join("data");
    ok(&[
        "synth",
        "--classes",
        "3",
        "--images",
        "8",
        "--per-image",
        "40",
        "--dim",
        "12",
        "--out",
        p(&data),
    ]);
    ok(&[
        "train-codebook",
        "--dataset",
        p(&data),
        "--k",
        "4",
        "--per-image",
        "20",
        "--seed",
        "5",
        "--out",
        p(&root.join("run")),
    ]);
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_pipeline_produces_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    prepared(root);
    let (data, run) = (root.join("data"), root.join("run"));
    ok(&["validate", "--dataset", p(&data)]);
    ok(&[
        "build-index",
        "--dataset",
        p(&data),
        "--codebook",
        p(&run.join("codebook.bin")),
        "--top",
        "30",
        "--out",
        p(&run),
    ]);
    let meta = json(&run.join("index.meta.json"));
    assert_eq!(meta["count"], 24);
    assert_eq!(meta["run"]["k"], 4);

    let stdout = ok(&[
        "evaluate",
        "--index",
        p(&run.join("index.bin")),
        "--out",
        p(&root.join("eval")),
    ]);
    assert!(stdout.contains("P@N"));
    let report = json(&root.join("eval/evaluation.json"));
    assert_eq!(report["queries"], 24);
    assert_eq!(report["per_class"].as_array().unwrap().len(), 3);
    for n in ["1", "3", "5", "10", "15", "20"] {
        let v = report["per_n"][n].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(root.join("eval/evaluation.txt").is_file());
    assert!(root.join("eval/evaluate.config.json").is_file());
    assert!(run.join("train-codebook.config.json").is_file());
}

#[test]
fn query_without_index_reports_index_missing() {
    let dir = tempfile::tempdir().unwrap();
    let out = rsir(&[
        "query",
        "--index",
        p(&dir.path().join("absent.bin")),
        "--image",
        "x",
    ]);
    assert_eq!(out.status.code(), Some(7));
}

#[test]
fn evaluate_records_pinv_expansion() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    prepared(root);
    let (data, run) = (root.join("data"), root.join("run"));
    ok(&[
        "build-index",
        "--dataset",
        p(&data),
        "--codebook",
        p(&run.join("codebook.bin")),
        "--out",
        p(&run),
    ]);
    ok(&[
        "evaluate",
        "--index",
        p(&run.join("index.bin")),
        "--expansion",
        "pinv",
        "--out",
        p(&root.join("eval")),
    ]);
    let report = json(&root.join("eval/evaluation.json"));
    assert_eq!(report["config"]["expansion"], "pinv");
    assert_eq!(report["config"]["expansion_top"], 3);
}

#[test]
fn identical_configs_give_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    prepared(&a);
    prepared(&b);
    for root in [&a, &b] {
        ok(&[
            "build-index",
            "--dataset",
            p(&root.join("data")),
            "--codebook",
            p(&root.join("run/codebook.bin")),
            "--out",
            p(&root.join("run")),
        ]);
    }
    for file in ["run/codebook.bin", "run/index.bin", "data/manifest.toml"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn reduced_pipelines_query() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    prepared(root);
    let (data, run) = (root.join("data"), root.join("run"));

    // feature level: PCA, codebook on projected features, index
    let feat = root.join("feat");
    ok(&[
        "train-pca",
        "--dataset",
        p(&data),
        "--level",
        "feature",
        "--dim",
        "6",
        "--out",
        p(&feat),
    ]);
    let fpca = feat.join("pca-feature.bin");
    ok(&[
        "train-codebook",
        "--dataset",
        p(&data),
        "--k",
        "4",
        "--feature-pca",
        p(&fpca),
        "--out",
        p(&feat),
    ]);
    ok(&[
        "build-index",
        "--dataset",
        p(&data),
        "--codebook",
        p(&feat.join("codebook.bin")),
        "--feature-pca",
        p(&fpca),
        "--out",
        p(&feat),
    ]);
    let stdout = ok(&[
        "query",
        "--index",
        p(&feat.join("index.bin")),
        "--image",
        "class_02_001",
        "--top-k",
        "3",
    ]);
    assert!(
        stdout.contains("class_02_001"),
        "self match first: {stdout}"
    );

    // global level
    let glob = root.join("glob");
    let codebook = run.join("codebook.bin");
    ok(&[
        "train-pca",
        "--dataset",
        p(&data),
        "--level",
        "global",
        "--dim",
        "10",
        "--codebook",
        p(&codebook),
        "--out",
        p(&glob),
    ]);
    ok(&[
        "build-index",
        "--dataset",
        p(&data),
        "--codebook",
        p(&codebook),
        "--global-pca",
        p(&glob.join("pca-global.bin")),
        "--out",
        p(&glob),
    ]);
    let meta = json(&glob.join("index.meta.json"));
    assert_eq!(meta["layout"], serde_json::json!([1, 10]));
    ok(&[
        "query",
        "--index",
        p(&glob.join("index.bin")),
        "--image",
        "class_00_004",
        "--expansion",
        "psum",
        "--leave-one-out",
        "--out",
        p(&glob),
    ]);
    let q = json(&glob.join("query.json"));
    let ids: Vec<&str> = q["results"]["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["image_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids.len(), 20);
    assert!(!ids.contains(&"class_00_004"));
}

#[test]
fn broken_dataset_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "synth",
        "--classes",
        "2",
        "--images",
        "3",
        "--per-image",
        "5",
        "--dim",
        "4",
        "--out",
        p(&data),
    ]);
    let victim = fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "rdesc"))
        .unwrap();
    fs::remove_file(victim).unwrap();
    let out = rsir(&["validate", "--dataset", p(&data), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(10));
    let report = json(&dir.path().join("validation.json"));
    assert_eq!(report["issues"].as_array().unwrap().len(), 1);

    let out = rsir(&[
        "train-codebook",
        "--dataset",
        p(&data),
        "--out",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(6));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(rsir(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(rsir(&["benchmark", "--bogus"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = rsir(&["benchmark", "--workers", "0", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn benchmark_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "benchmark",
        "--sizes",
        "10,20",
        "--dims",
        "8,32",
        "--repetitions",
        "3",
        "--out",
        p(dir.path()),
    ]);
    let report = json(&dir.path().join("benchmark.json"));
    assert_eq!(report["cells"].as_array().unwrap().len(), 4);
    assert!(fs::read_to_string(dir.path().join("benchmark.txt"))
        .unwrap()
        .contains("size"));
}
