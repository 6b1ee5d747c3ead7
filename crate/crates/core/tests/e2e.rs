//! Scripted three-turn session against golden Turn records.
//!
//! `UPDATE_GOLDEN=1 cargo test -p chronicle --test e2e` re-records the
//! transcript from the rule-based responder and rewrites the golden turns.

mod common;

use std::sync::Arc;

use chronicle::assistant::DEGRADED_ANSWER;
use chronicle::llm::{write_transcript, RecordingGateway, ScriptedStub};
use common::*;

fn regenerate() {
    let recorder = Arc::new(RecordingGateway::new(Responder));
    let turns = run_e2e(recorder.clone());
    write_transcript(golden_transcript_path(), &recorder.records()).unwrap();
    std::fs::write(golden_turns_path(), turns_json(&turns)).unwrap();
}

#[test]
fn scripted_session_matches_golden_turns() {
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        regenerate();
    }
    let stub = Arc::new(golden_stub());
    let turns = run_e2e(stub.clone());
    let golden = std::fs::read_to_string(golden_turns_path()).unwrap();
    assert_eq!(turns_json(&turns), golden);
    // query, sql and answer per turn
    assert_eq!(stub.calls(), 9);
}

#[test]
fn golden_session_covers_filter_fallback_history_and_repair() {
    let turns = run_e2e(Arc::new(golden_stub()));
    assert_eq!(turns.len(), 3);

    let first = &turns[0];
    let filter = first.sql_filter.as_ref().expect("first turn is date-filtered");
    // fixture entries dated before 1905-01-01
    assert_eq!(filter.iter().copied().collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6]);
    assert!(first.candidates.iter().all(|c| filter.contains(&c.entry_id)));
    assert!(!first.citations.is_empty());

    let second = &turns[1];
    assert_ne!(second.generated_query, second.user_text);
    assert!(second.sql_filter.is_none());
    assert_eq!(second.repairs, 1);

    let third = &turns[2];
    assert!(third.query_fallback);
    assert_eq!(third.generated_query, third.user_text);
    assert!(!third.degraded);

    for turn in &turns {
        assert!(turn.answer_rendered != DEGRADED_ANSWER);
        for c in &turn.citations {
            assert!(c.marker >= 1 && c.marker <= turn.candidates.len());
            assert_eq!(turn.candidates[c.marker - 1].entry_id, c.entry_id);
        }
    }
}

#[test]
fn record_then_replay_is_byte_identical() {
    let recorder = Arc::new(RecordingGateway::new(Responder));
    let live = run_e2e(recorder.clone());
    let records = recorder.records();
    assert_eq!(records.len(), 9);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    write_transcript(&path, &records).unwrap();
    let replayed = run_e2e(Arc::new(ScriptedStub::from_transcript(&chronicle::llm::read_transcript(&path).unwrap())));
    assert_eq!(turns_json(&live), turns_json(&replayed));
}

#[test]
fn recording_to_file_appends_one_line_per_call() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("calls.jsonl");
    let recorder = Arc::new(RecordingGateway::to_file(Responder, &path).unwrap());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
    run_e2e(recorder.clone());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), recorder.records().len());
}

#[test]
fn same_script_same_turns() {
    let a = run_e2e(Arc::new(golden_stub()));
    let b = run_e2e(Arc::new(golden_stub()));
    assert_eq!(a, b);
}

#[test]
fn unavailable_answer_model_degrades_but_keeps_turn() {
    // every call misses, so query generation falls back and the answer degrades
    let assistant = fixture_assistant(Arc::new(ScriptedStub::new()));
    let id = assistant.create_session();
    let turn = assistant.handle_turn(&id, "frost at the station", None).unwrap();
    assert!(turn.degraded && turn.query_fallback);
    assert!(turn.answer_rendered.starts_with(DEGRADED_ANSWER));
    assert_eq!(turn.citations.len(), turn.candidates.len());
    assert_eq!(assistant.session(&id).unwrap().turns.len(), 1);
}

#[test]
fn empty_user_text_is_rejected_before_any_call() {
    let stub = Arc::new(ScriptedStub::new());
    let assistant = fixture_assistant(stub.clone());
    let id = assistant.create_session();
    assert!(matches!(assistant.handle_turn(&id, "  ", None), Err(chronicle::Error::InvalidArgument(_))));
    assert_eq!(stub.calls(), 0);
    assert!(assistant.session(&id).unwrap().turns.is_empty());
}

#[test]
fn unknown_session_is_reported() {
    let assistant = fixture_assistant(Arc::new(ScriptedStub::new()));
    assert!(matches!(assistant.handle_turn("nope", "hello", None), Err(chronicle::Error::UnknownSession(_))));
}
