//! Shared fixtures for integration tests and the acceptance runner.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use chronicle::assistant::{Assistant, AssistantConfig, Turn};
use chronicle::fusion::HybridIndex;
use chronicle::kb::{CorpusFormat, UrlTemplate};
use chronicle::lexical::AnalyzerConfig;
use chronicle::llm::{read_transcript, ChatGateway, CompletionRequest, Role, ScriptedStub};
use chronicle::vector::{EmbeddingProvider, HashingProvider};
use chronicle::{Error, GatewayErrorKind, KnowledgeBase};

pub const BASE_URL: &str = "http://localhost:8080";

/// User messages of the scripted e2e session.
pub const E2E_TURNS: [&str; 3] = [
    "What did the diarists write about the weather before 1905?",
    "And in winter?",
    "Who complained about the harvest?",
];

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn fixture_kb() -> KnowledgeBase {
    let kb = KnowledgeBase::open_in_memory().expect("in-memory store");
    let file = std::fs::File::open(data_dir().join("fixture_corpus.jsonl")).expect("fixture corpus");
    kb.ingest(std::io::BufReader::new(file), CorpusFormat::Jsonl).expect("fixture ingests");
    kb
}

pub fn fixture_assistant(gateway: Arc<dyn ChatGateway>) -> Assistant {
    let kb = fixture_kb();
    let provider: Arc<dyn EmbeddingProvider> = Arc::new(HashingProvider::default());
    let config = AssistantConfig { url_template: UrlTemplate::from_base_url(BASE_URL), ..AssistantConfig::default() };
    let index = HybridIndex::build(&kb, provider.as_ref(), AnalyzerConfig::default(), &config.fusion.fields)
        .expect("fixture index");
    Assistant::new(Arc::new(kb), index, provider, gateway, config).expect("assistant")
}

/// Runs the three e2e turns in one session.
pub fn run_e2e(gateway: Arc<dyn ChatGateway>) -> Vec<Turn> {
    let assistant = fixture_assistant(gateway);
    let id = assistant.create_session();
    for text in E2E_TURNS {
        assistant.handle_turn(&id, text, None).expect("turn runs");
    }
    assistant.session(&id).expect("session").turns
}

pub fn golden_transcript_path() -> PathBuf {
    data_dir().join("e2e/transcript.jsonl")
}

pub fn golden_turns_path() -> PathBuf {
    data_dir().join("e2e/turns.json")
}

pub fn golden_stub() -> ScriptedStub {
    ScriptedStub::from_transcript(&read_transcript(golden_transcript_path()).expect("golden transcript"))
}

pub fn turns_json(turns: &[Turn]) -> String {
    serde_json::to_string_pretty(turns).expect("turns serialize") + "\n"
}

/// Rule-based stand-in for the hosted models, used only to author the e2e transcript.
///
/// Query generation for the third turn fails with a timeout so the session
/// exercises the fallback query.
pub struct Responder;

fn last_line_after<'a>(text: &'a str, label: &str) -> &'a str {
    text.rfind(label).map(|i| text[i + label.len()..].lines().next().unwrap_or("").trim()).unwrap_or("")
}

impl ChatGateway for Responder {
    fn complete(&self, request: &CompletionRequest) -> chronicle::Result<String> {
        let first = &request.messages[0];
        let last = request.messages.last().expect("non-empty").content.as_str();
        if first.role == Role::System && first.content.starts_with("You turn a conversation") {
            return match last {
                "What did the diarists write about the weather before 1905?" => Ok("weather before 1905".into()),
                "And in winter?" => Ok("winter weather snow frost".into()),
                _ => Err(Error::Gateway { kind: GatewayErrorKind::Timeout, message: "no reply within 60s".into() }),
            };
        }
        if first.role == Role::System {
            let markers = fragment_numbers(last);
            let mut answer = String::new();
            for n in markers.iter().take(2) {
                answer.push_str(&format!("Fragment {n} speaks to this [{n}]. "));
            }
            if last_line_after(last, "Question:").contains("winter") {
                answer.push_str("A stray reference [9] is not in the list.");
            }
            return Ok(answer.trim_end().to_string());
        }
        let question = last_line_after(last, "Question:");
        if question.contains("before 1905") {
            Ok("The question limits the entry date.\n```sql\nSELECT entries.id FROM entries WHERE entries.date < '1905-01-01'\n```".into())
        } else {
            Ok("Nothing structured is constrained.\nNO_FILTER".into())
        }
    }
}

fn fragment_numbers(prompt: &str) -> Vec<usize> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix('[').and_then(|r| r.split(']').next()).and_then(|n| n.parse().ok()))
        .collect()
}
