//! The `chronicle` binary end to end over a temporary data directory.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use chronicle::assistant::Turn;
use common::{core_data, golden_transcript, golden_turns, E2E_TURNS};
use serde_json::Value;

fn chronicle(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_chronicle"))
        .current_dir(dir)
        .env_remove("LLM_ENDPOINT")
        .env_remove("EMBED_ENDPOINT")
        .env_remove("CHRONICLE_CONFIG")
        .args(["--data-dir", "data"])
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn benchmark_ingest_search_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    chronicle(dir.path(), &["gen-benchmark", "--out", "bench"]);
    assert_eq!(std::fs::read_to_string(dir.path().join("bench/dataset.jsonl")).unwrap().lines().count(), 75);
    chronicle(dir.path(), &["ingest", "bench/corpus.jsonl"]);
    for f in ["chronicle.db", "lexical.idx", "vectors.bin", "index.hash"] {
        assert!(dir.path().join("data").join(f).exists(), "{f}");
    }

    let hybrid = json(&chronicle(dir.path(), &["--alpha", "1", "search", "frost on the river", "--json"]));
    let semantic = json(&chronicle(dir.path(), &["search", "frost on the river", "--arm", "semantic", "--json"]));
    let ids = |v: &Value| v.as_array().unwrap().iter().map(|c| c["entry_id"].as_i64().unwrap()).collect::<Vec<_>>();
    assert_eq!(ids(&hybrid).len(), 5);
    assert_eq!(ids(&hybrid), ids(&semantic));

    let report = json(&chronicle(dir.path(), &["eval", "--dataset", "bench/dataset.jsonl", "--json"]));
    let mean = |name: &str| {
        report["results"].as_array().unwrap().iter().find(|r| r["config"]["name"] == name).unwrap()["mean_precision"]
            .as_f64()
            .unwrap()
    };
    assert!(mean("hybrid tfidf alpha=0.9") >= mean("tfidf only"));
}

#[test]
fn ask_replays_a_recorded_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = core_data().join("fixture_corpus.jsonl");
    chronicle(dir.path(), &["ingest", fixture.to_str().unwrap()]);
    let script = golden_transcript();
    let out = chronicle(dir.path(), &["--stub-script", script.to_str().unwrap(), "ask", E2E_TURNS[0], "--json"]);
    let turn: Turn = serde_json::from_slice(&out.stdout).unwrap();
    let golden: Vec<Turn> = serde_json::from_str(&golden_turns()).unwrap();
    assert_eq!(turn, golden[0]);

    // recording the replay yields the three calls of that turn
    let out = chronicle(
        dir.path(),
        &["--stub-script", script.to_str().unwrap(), "ask", E2E_TURNS[0], "--record", "calls.jsonl"],
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(&golden[0].answer_rendered));
    assert_eq!(std::fs::read_to_string(dir.path().join("calls.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn index_rebuilds_from_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = core_data().join("fixture_corpus.jsonl");
    chronicle(dir.path(), &["ingest", fixture.to_str().unwrap()]);
    std::fs::remove_file(dir.path().join("data/vectors.bin")).unwrap();
    let out = chronicle(dir.path(), &["index"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "indexed 14 entries");
    assert!(dir.path().join("data/vectors.bin").exists());
}
