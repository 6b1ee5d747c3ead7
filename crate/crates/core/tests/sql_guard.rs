//! Guard corpus and the text-to-SQL filter stage over the fixture store.

mod common;

use std::collections::BTreeSet;

use chronicle::kb::SchemaDescription;
use chronicle::llm::{ChatMessage, CompletionRequest, ScriptedStub};
use chronicle::sql::{build_text2sql_prompt, default_few_shots, sql_filter, validate_select_only, SqlOrigin, SqlQuery};
use chronicle::GatewayErrorKind;
use common::{data_dir, fixture_kb};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    sql: String,
    #[serde(default)]
    expect: Option<String>,
}

fn load(name: &str) -> Vec<Case> {
    let text = std::fs::read_to_string(data_dir().join("sql-guard").join(name)).unwrap();
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn adversarial_corpus_is_rejected_with_expected_reasons() {
    let schema = SchemaDescription::archive();
    let cases = load("adversarial.jsonl");
    assert!(cases.len() >= 50);
    let mut mismatches = Vec::new();
    for case in &cases {
        let v = validate_select_only(&case.sql, &schema);
        assert!(!v.accepted, "accepted adversarial statement {:?}", case.sql);
        let got = v.reason.map(|r| r.as_str().to_string());
        if got != case.expect {
            mismatches.push(format!("{:?}: expected {:?}, got {:?} ({})", case.sql, case.expect, got, v.detail));
        }
    }
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n"));
}

#[test]
fn valid_corpus_is_accepted_and_runs_without_changing_the_store() {
    let kb = fixture_kb();
    let before = kb.content_hash().unwrap();
    let cases = load("valid.jsonl");
    assert!(cases.len() >= 20);
    let tables: BTreeSet<&str> = ["entries", "authors"].into();
    for case in &cases {
        let q = SqlQuery::check(case.sql.clone(), SqlOrigin::User, kb.schema());
        let v = q.verdict();
        assert!(v.accepted, "rejected {:?}: {:?} {}", case.sql, v.reason, v.detail);
        assert!(v.referenced_tables.iter().all(|t| tables.contains(t.as_str())));
        for col in &v.referenced_columns {
            let (table, column) = col.split_once('.').unwrap();
            assert!(kb.schema().table(table).unwrap().columns.iter().any(|c| c.name == column), "{col}");
        }
        kb.execute_select(&q).unwrap_or_else(|e| panic!("{:?} failed: {e}", case.sql));
    }
    for case in load("adversarial.jsonl") {
        let q = SqlQuery::check(case.sql, SqlOrigin::User, kb.schema());
        assert!(kb.execute_select(&q).is_err());
    }
    assert_eq!(kb.content_hash().unwrap(), before);
}

fn sql_request(question: &str) -> CompletionRequest {
    let kb = fixture_kb();
    let prompt = build_text2sql_prompt(question, kb.schema(), &default_few_shots());
    CompletionRequest::new("gpt-4o-mini", vec![ChatMessage::user(prompt)]).with_temperature(0.0)
}

#[test]
fn filter_from_date_select_matches_fixture_dates() {
    let kb = fixture_kb();
    let q = "entries before 1900";
    let stub = ScriptedStub::new().with_reply(
        &sql_request(q),
        "The date is constrained.\n```sql\nSELECT id FROM entries WHERE date < '1900-01-01'\n```",
    );
    let out = sql_filter(&stub, "gpt-4o-mini", &kb, q, &default_few_shots());
    // fixture dates 1893-01-12, 1898-07-04 and 1899-08-21 precede 1900
    assert_eq!(out.filter, Some(BTreeSet::from([1, 2, 3])));
    assert!(out.warning.is_none());
}

#[test]
fn select_on_three_entry_store_returns_one_row() {
    let kb = chronicle::KnowledgeBase::open_in_memory().unwrap();
    let corpus = r#"{"type":"author","id":1,"name":"A","birth_date":null,"death_date":null,"bio":""}
{"type":"entry","id":1,"author_id":1,"date":"1901-05-01","text":"one"}
{"type":"entry","id":2,"author_id":1,"date":"1907-05-01","text":"two"}
{"type":"entry","id":3,"author_id":1,"date":"1912-05-01","text":"three"}
"#;
    kb.ingest(corpus.as_bytes(), chronicle::kb::CorpusFormat::Jsonl).unwrap();
    let q = SqlQuery::check("SELECT id FROM entries WHERE date < '1905-01-01'", SqlOrigin::User, kb.schema());
    let rows = kb.execute_select(&q).unwrap();
    assert_eq!(rows.id_set().unwrap(), BTreeSet::from([1]));
}

#[test]
fn no_filter_reply_means_unfiltered() {
    let kb = fixture_kb();
    let q = "how was the weather";
    let stub = ScriptedStub::new().with_reply(&sql_request(q), "Nothing structured here.\nNO_FILTER");
    let out = sql_filter(&stub, "gpt-4o-mini", &kb, q, &default_few_shots());
    assert_eq!(out.filter, None);
    assert_eq!(out.warning, None);
}

#[test]
fn destructive_reply_is_dropped_with_warning() {
    let kb = fixture_kb();
    let before = kb.content_hash().unwrap();
    let q = "remove everything";
    let stub = ScriptedStub::new().with_reply(&sql_request(q), "DROP TABLE entries;");
    let out = sql_filter(&stub, "gpt-4o-mini", &kb, q, &default_few_shots());
    assert_eq!(out.filter, None);
    assert!(out.warning.unwrap().contains("not_select"));
    assert_eq!(kb.content_hash().unwrap(), before);
    assert_eq!(kb.counts().unwrap().entries, 14);
}

#[test]
fn gateway_failure_and_garbage_degrade_to_unfiltered() {
    let kb = fixture_kb();
    let stub = ScriptedStub::new()
        .with_error(&sql_request("a"), GatewayErrorKind::Server, "boom")
        .with_reply(&sql_request("b"), "I am not sure what you mean.");
    for q in ["a", "b", "c"] {
        let out = sql_filter(&stub, "gpt-4o-mini", &kb, q, &default_few_shots());
        assert_eq!(out.filter, None);
        assert!(out.warning.is_some(), "{q}");
    }
}

#[test]
fn prompt_names_every_table_and_the_question() {
    let kb = fixture_kb();
    let prompt = build_text2sql_prompt("letters from 1915", kb.schema(), &default_few_shots());
    for t in ["entries", "authors"] {
        assert!(prompt.contains(t));
    }
    assert!(prompt.contains("letters from 1915"));
    assert!(prompt.contains("NO_FILTER"));
}
