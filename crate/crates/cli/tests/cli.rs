use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tagforest"));
    cmd.env_remove("TAGFOREST_THREADS");
    cmd
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", stderr(&out));
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const TREE_3: &str = r#"{"nodes": [
  {"id": 0, "name": "r", "parent": null, "children": [1, 2], "depth": 0},
  {"id": 1, "name": "l1", "parent": 0, "children": [], "depth": 1},
  {"id": 2, "name": "l2", "parent": 0, "children": [], "depth": 1}
]}"#;

/// Three-node tree, embeddings and a small pool in a fresh directory.
fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("tree.json"), TREE_3).unwrap();
    std::fs::write(
        p.join("emb.tsv"),
        "dim=2 count=4\nl1\t1 0\nl2\t0 1\nmatrix stuff\t0.9 0.1\nnoise\t-1 -1\n",
    )
    .unwrap();
    let pool = [
        r#"{"id":"a","query":"q","response":"r","tags":["l1"],"quality":9,"complexity":3}"#,
        r#"{"id":"b","query":"q","response":"r","tags":["matrix stuff"],"quality":7,"complexity":5}"#,
        r#"{"id":"c","query":"q","response":"r","tags":["l2","noise"],"quality":5,"complexity":1}"#,
        r#"{"id":"d","query":"q","response":"r","tags":["noise"],"quality":1,"complexity":4}"#,
    ];
    std::fs::write(p.join("pool.jsonl"), pool.join("\n") + "\n").unwrap();
    dir
}

fn vocabulary(dir: &Path, n: usize) {
    let mut tags = String::new();
    let mut emb = format!("dim=3 count={n}\n");
    for i in 0..n {
        let a = i as f64 * 0.37;
        tags.push_str(&format!("tag {i}\n"));
        emb.push_str(&format!("tag {i}\t{} {} {}\n", a.cos(), a.sin(), (i % 3) as f64));
    }
    std::fs::write(dir.join("tags.txt"), tags).unwrap();
    std::fs::write(dir.join("emb.tsv"), emb).unwrap();
}

#[test]
fn build_tree_writes_tree_and_manifest_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    vocabulary(p, 40);
    let args = [
        "build-tree", "--tags", "tags.txt", "--embeddings", "emb.tsv", "--depth", "3", "--seed", "7", "--out",
        "tree.json",
    ];
    ok(p, &args);
    let first = read(p.join("tree.json"));
    let manifest: Value = serde_json::from_str(&read(p.join("tree.manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "build-tree");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["params"]["depth"], 3);
    assert_eq!(manifest["inputs"]["tags.txt"].as_str().unwrap().len(), 64);
    assert!(manifest["outputs"]["tree.json"].is_string());

    ok(p, &args);
    assert_eq!(read(p.join("tree.json")), first);
    let tree: Value = serde_json::from_str(&first).unwrap();
    let nodes = tree["nodes"].as_array().unwrap();
    let leaves = nodes.iter().filter(|n| n["children"].as_array().unwrap().is_empty()).count();
    assert_eq!(leaves, 40);
    assert!(nodes.iter().all(|n| n["depth"].as_u64().unwrap() <= 3));
}

#[test]
fn build_tree_depth_one_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    vocabulary(p, 25);
    ok(p, &["build-tree", "--tags", "tags.txt", "--embeddings", "emb.tsv", "--depth", "1"]);
    let tree: Value = serde_json::from_str(&read(p.join("tree.json"))).unwrap();
    let nodes = tree["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 26);
    assert_eq!(nodes[0]["children"].as_array().unwrap().len(), 25);
}

#[test]
fn missing_embeddings_exit_two_and_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    vocabulary(p, 5);
    let out = run(p, &["build-tree", "--tags", "tags.txt", "--embeddings", "nowhere.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.tsv"), "{}", stderr(&out));
    assert!(!p.join("tree.json").exists());
}

#[test]
fn anchor_then_sample_then_stats() {
    let dir = fixture();
    let p = dir.path();
    let out = ok(p, &["anchor", "--tree", "tree.json", "--pool", "pool.jsonl", "--embeddings", "emb.tsv"]);
    assert!(out.contains("4 instances"), "{out}");
    let anchored: Vec<Value> = read(p.join("anchored.jsonl"))
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(anchored[0]["leaves"], serde_json::json!([1]));
    assert_eq!(anchored[1]["leaves"], serde_json::json!([1]));
    assert_eq!(anchored[2]["leaves"], serde_json::json!([2]));
    assert_eq!(anchored[2]["dropped"], serde_json::json!(["noise"]));
    assert_eq!(anchored[3]["leaves"], serde_json::json!([]));
    // Scores are min-max normalized over the pool.
    assert_eq!(anchored[0]["quality"], 1.0);
    assert_eq!(anchored[3]["quality"], 0.0);
    let drops: Value = serde_json::from_str(&read(p.join("anchored.drops.json"))).unwrap();
    assert_eq!(drops["unanchorable"], serde_json::json!(["d"]));
    assert!(p.join("anchored.manifest.json").exists());

    let out = ok(p, &["sample", "--anchored", "anchored.jsonl", "--tree", "tree.json", "--budget", "2"]);
    assert!(out.contains("picks: 2"), "{out}");
    assert!(out.contains("final information:"), "{out}");
    let subset = read(p.join("subset.jsonl"));
    assert_eq!(subset.lines().count(), 2);
    let trace: Value = serde_json::from_str(&read(p.join("trace.json"))).unwrap();
    assert_eq!(trace["mode"], "general");
    assert_eq!(trace["excluded"], serde_json::json!(["d"]));
    for name in ["subset.manifest.json", "trace.manifest.json"] {
        assert!(p.join(name).exists(), "{name}");
    }

    let stats: Value = serde_json::from_str(&ok(p, &["stats", "--input", "subset.jsonl", "--tree", "tree.json"])).unwrap();
    assert_eq!(stats["instances"], 2);
    assert_eq!(stats["leaves"], serde_json::json!(["l1", "l2"]));
    assert_eq!(stats["coverage"][0]["covered"], 1);
}

#[test]
fn sample_exports_pool_records_when_given() {
    let dir = fixture();
    let p = dir.path();
    ok(p, &["anchor", "--tree", "tree.json", "--pool", "pool.jsonl", "--embeddings", "emb.tsv"]);
    ok(
        p,
        &["sample", "--anchored", "anchored.jsonl", "--tree", "tree.json", "--budget", "3", "--pool", "pool.jsonl"],
    );
    let first: Value = serde_json::from_str(read(p.join("subset.jsonl")).lines().next().unwrap()).unwrap();
    assert_eq!(first["query"], "q");
    assert_eq!(first["selection"]["rank"], 0);
}

#[test]
fn lambda_without_target_is_a_usage_error() {
    let dir = fixture();
    let p = dir.path();
    ok(p, &["anchor", "--tree", "tree.json", "--pool", "pool.jsonl", "--embeddings", "emb.tsv"]);
    let out = run(
        p,
        &["sample", "--anchored", "anchored.jsonl", "--tree", "tree.json", "--budget", "2", "--lambda", "5"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("aligned mode requires target"));
    assert!(!p.join("subset.jsonl").exists());
}

#[test]
fn aligned_sampling_with_target() {
    let dir = fixture();
    let p = dir.path();
    ok(p, &["anchor", "--tree", "tree.json", "--pool", "pool.jsonl", "--embeddings", "emb.tsv"]);
    std::fs::write(p.join("q.json"), r#"{"l2": 1.0}"#).unwrap();
    let out = ok(
        p,
        &[
            "sample", "--anchored", "anchored.jsonl", "--tree", "tree.json", "--budget", "1", "--lambda", "5",
            "--target", "q.json",
        ],
    );
    assert!(out.contains("final KL:"), "{out}");
    let trace: Value = serde_json::from_str(&read(p.join("trace.json"))).unwrap();
    assert_eq!(trace["mode"], "aligned");
    assert_eq!(trace["picks"][0]["id"], "c");
    let manifest: Value = serde_json::from_str(&read(p.join("subset.manifest.json"))).unwrap();
    assert_eq!(manifest["params"]["lambda"], 5.0);
    assert!(manifest["inputs"]["q.json"].is_string());
}

#[test]
fn budget_zero_gives_empty_subset() {
    let dir = fixture();
    let p = dir.path();
    ok(p, &["anchor", "--tree", "tree.json", "--pool", "pool.jsonl", "--embeddings", "emb.tsv"]);
    ok(p, &["sample", "--anchored", "anchored.jsonl", "--tree", "tree.json", "--budget", "0"]);
    assert_eq!(read(p.join("subset.jsonl")), "");
    let trace: Value = serde_json::from_str(&read(p.join("trace.json"))).unwrap();
    assert_eq!(trace["picks"], serde_json::json!([]));
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("tree.json"), TREE_3).unwrap();
    let lines: Vec<String> = (0..300)
        .map(|i| {
            let leaves = match i % 3 {
                0 => "[1]",
                1 => "[2]",
                _ => "[1,2]",
            };
            let q = ((i * 37) % 101) as f64 / 100.0;
            format!(r#"{{"id":"x{i:03}","leaves":{leaves},"dropped":[],"quality":{q},"complexity":0.5}}"#)
        })
        .collect();
    std::fs::write(p.join("anchored.jsonl"), lines.join("\n") + "\n").unwrap();
    std::fs::write(p.join("q.json"), r#"{"l1": 0.3, "l2": 0.7}"#).unwrap();
    let mut outputs = Vec::new();
    for (threads, env) in [("1", None), ("4", None), ("8", None), ("8", Some("2"))] {
        let mut cmd = bin();
        if let Some(cap) = env {
            cmd.env("TAGFOREST_THREADS", cap);
        }
        let out = cmd
            .current_dir(p)
            .args([
                "sample", "--anchored", "anchored.jsonl", "--tree", "tree.json", "--budget", "50", "--lambda", "5",
                "--target", "q.json", "--threads", threads,
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        outputs.push((read(p.join("subset.jsonl")), read(p.join("trace.json"))));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn invalid_thread_cap_is_a_usage_error() {
    let dir = fixture();
    let out = bin()
        .current_dir(dir.path())
        .env("TAGFOREST_THREADS", "zero")
        .args(["stats", "--input", "pool.jsonl", "--tree", "tree.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn derive_target_from_reference() {
    let dir = fixture();
    let p = dir.path();
    let reference = [
        r#"{"id":"r1","leaves":[1],"dropped":[],"quality":0.5,"complexity":0.5}"#,
        r#"{"id":"r2","leaves":[1,2],"dropped":[],"quality":0.5,"complexity":0.5}"#,
        r#"{"id":"r3","leaves":[1],"dropped":[],"quality":0.5,"complexity":0.5}"#,
    ];
    std::fs::write(p.join("ref.jsonl"), reference.join("\n")).unwrap();
    ok(p, &["derive-target", "--tree", "tree.json", "--reference", "ref.jsonl", "--out", "q.json"]);
    let q: Value = serde_json::from_str(&read(p.join("q.json"))).unwrap();
    assert_eq!(q, serde_json::json!({"l1": 0.75, "l2": 0.25}));
    assert!(p.join("q.manifest.json").exists());

    std::fs::write(p.join("empty.jsonl"), "").unwrap();
    let out = run(p, &["derive-target", "--tree", "tree.json", "--reference", "empty.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stats_examples() {
    let dir = fixture();
    let p = dir.path();
    let both = [
        r#"{"id":"a","leaves":[1],"dropped":[],"quality":0.2,"complexity":0.4}"#,
        r#"{"id":"b","leaves":[2],"dropped":[],"quality":0.6,"complexity":0.8}"#,
    ];
    std::fs::write(p.join("both.jsonl"), both.join("\n")).unwrap();
    std::fs::write(p.join("q.json"), r#"{"l1": 0.5, "l2": 0.5}"#).unwrap();

    let plain: Value = serde_json::from_str(&ok(p, &["stats", "--input", "both.jsonl", "--tree", "tree.json"])).unwrap();
    assert_eq!(plain["leaf_histogram"], serde_json::json!([1, 1]));
    assert!(plain.get("kl").is_none());
    assert_eq!(plain["coverage"][1]["covered"], 2);
    assert!((plain["score_quantiles"]["max"].as_f64().unwrap() - 0.64).abs() < 1e-12);

    let with_q: Value = serde_json::from_str(&ok(
        p,
        &["stats", "--input", "both.jsonl", "--tree", "tree.json", "--target", "q.json", "--out", "stats.json"],
    ))
    .unwrap();
    assert!(with_q["kl"].as_f64().unwrap().abs() < 1e-9);
    assert!(p.join("stats.manifest.json").exists());

    std::fs::write(p.join("none.jsonl"), "").unwrap();
    std::fs::write(p.join("point.json"), r#"{"l1": 1.0}"#).unwrap();
    let empty: Value = serde_json::from_str(&ok(
        p,
        &["stats", "--input", "none.jsonl", "--tree", "tree.json", "--target", "point.json"],
    ))
    .unwrap();
    assert_eq!(empty["leaf_histogram"], serde_json::json!([0, 0]));
    // All-zero counts smooth to a uniform P.
    assert!((empty["kl"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
}

#[test]
fn stats_rejects_schema_mismatch() {
    let dir = fixture();
    let p = dir.path();
    std::fs::write(p.join("bad.jsonl"), r#"{"id":"a","quality":0.5}"#).unwrap();
    let out = run(p, &["stats", "--input", "bad.jsonl", "--tree", "tree.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.jsonl:1"), "{}", stderr(&out));
}

#[test]
fn malformed_tree_is_a_usage_error() {
    let dir = fixture();
    let p = dir.path();
    std::fs::write(p.join("broken.json"), r#"{"nodes": [{"id": 0, "name": "r", "parent": 0, "children": [], "depth": 0}]}"#)
        .unwrap();
    let out = run(p, &["stats", "--input", "pool.jsonl", "--tree", "broken.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("invalid tree"), "{}", stderr(&out));
}
