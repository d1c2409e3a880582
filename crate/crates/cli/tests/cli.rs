use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn tuskmarks(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tuskmarks"))
        .args(args)
        .args(["--log-level", "error"])
        .current_dir(dir)
        .env_remove("TUSKMARKS_CONFIG")
        .env("TUSKMARKS_FIXED_CLOCK", "2024-03-01T12:00:00Z")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tuskmarks(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    tuskmarks(dir, args).status.code().expect("exit code")
}

fn small_corpus() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["fixture", "corpus", ".", "--images-per-seizure", "30"]);
    dir
}

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus")
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = small_corpus();
    let d = dir.path();
    assert_eq!(code(d, &["--config", "nope.toml", "config"]), 2);
    ok(d, &["ingest"]);
    ok(d, &["postprocess"]);
    assert_eq!(code(d, &["propagate"]), 3, "propagate before sample");
    let toml = std::fs::read_to_string(d.join("tuskmarks.toml")).unwrap();
    std::fs::write(d.join("unseeded.toml"), toml.replace("seed = 2014", "")).unwrap();
    assert_eq!(code(d, &["--config", "unseeded.toml", "sample"]), 2, "sample without a seed");
    assert_eq!(code(d, &["--set", "sampling.fracton=0.2", "config"]), 2, "unknown key");
    assert_eq!(code(d, &["--set", "sampling.fraction=abc", "config"]), 2);
    ok(d, &["sample"]);
    assert_eq!(code(d, &["--set", "paths.manifest=missing.tsv", "ingest"]), 3);
}

#[test]
fn postprocess_twice_leaves_catalog_unchanged() {
    let dir = small_corpus();
    let d = dir.path();
    ok(d, &["ingest"]);
    ok(d, &["postprocess"]);
    let first = std::fs::read(d.join("catalog/markings.jsonl")).unwrap();
    ok(d, &["postprocess"]);
    assert_eq!(first, std::fs::read(d.join("catalog/markings.jsonl")).unwrap());
}

#[test]
fn links_on_occurrence_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["fixture", "occurrence", "occ"]);
    let out = ok(d, &["--set", "paths.catalog=occ", "analyze", "links", "--json"]);
    let links: Vec<serde_json::Value> = serde_json::from_str(&out).unwrap();
    let rows: Vec<(String, usize, String)> = links
        .iter()
        .map(|l| {
            let set = l["seizure_set"].as_array().unwrap().iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+");
            (set, l["shared_signatures"].as_array().unwrap().len(), l["evidence_kind"].as_str().unwrap().to_string())
        })
        .collect();
    let matches: Vec<_> = rows.iter().filter(|r| r.2 == "signature_match").collect();
    assert_eq!(matches.len(), 6, "{rows:?}");
    for (set, n) in [("5+8", 8), ("3+8", 1), ("7+8", 1), ("2+5+8", 1), ("2+7+8", 1), ("2+8", 8)] {
        assert!(matches.iter().any(|r| r.0 == set && r.1 == n), "missing {set}:{n} in {rows:?}");
    }
    assert!(rows.iter().any(|r| r.0 == "2+3" && r.2 == "xo_variant"), "{rows:?}");
    let table = ok(d, &["--set", "paths.catalog=occ", "analyze", "links"]);
    assert!(table.contains("Lambda X/O variation"));
}

#[test]
fn frequency_view_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["fixture", "frequency", "freq"]);
    let out = ok(d, &["--set", "paths.catalog=freq", "analyze", "freq", "--threshold", "10", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["unique_keys"], 133);
    assert_eq!(v["high_frequency_keys"], 16);
    assert_eq!(v["total_occurrences"], 1196);
    assert_eq!(v["high_frequency_occurrences"], 909);
}

#[test]
fn review_through_embedded_server() {
    let dir = small_corpus();
    let d = dir.path();
    let out = ok(d, &["pipeline"]);
    assert!(out.contains("halted at the review gate"), "{out}");

    let status = ok(d, &["review", "status", "--json"]);
    let before: serde_json::Value = serde_json::from_str(&status).unwrap();
    let open = before["open_tasks"]["initial_labeling"].as_u64().unwrap();
    assert!(out.contains(&format!("{open} initial_labeling task(s)")), "{out}");

    let queue = ok(d, &["review", "queue", "initial_labeling", "--limit", "1", "--json"]);
    let items: Vec<serde_json::Value> = serde_json::from_str(&queue).unwrap();
    let task = items[0]["task"]["task_id"].as_str().unwrap().to_string();
    let m = &items[0]["marking"];
    let label = m["text"].as_str().or(m["symbol_name"].as_str()).unwrap_or("BB").to_string();
    ok(d, &["review", "label", &task, &label, "--reviewer", "ana"]);
    assert_eq!(code(d, &["review", "label", &task, &label]), 3, "second submission conflicts");

    let after: serde_json::Value = serde_json::from_str(&ok(d, &["review", "status", "--json"])).unwrap();
    assert_eq!(after["open_tasks"]["initial_labeling"].as_u64().unwrap(), open - 1);
}

#[test]
fn bundled_corpus_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["fixture", "corpus", "."]);
    for name in ["manifest.tsv", "detections.tsv", "decisions.tsv", "transcript.jsonl", "embeddings.jsonl", "tuskmarks.toml"] {
        assert_eq!(
            std::fs::read(dir.path().join(name)).unwrap(),
            std::fs::read(bundled().join(name)).unwrap(),
            "{name} differs from the bundled corpus"
        );
    }
}
