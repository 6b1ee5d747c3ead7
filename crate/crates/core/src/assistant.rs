//! Multi-turn dialog: query generation, filtering, retrieval, cited answers.
//!
//! A turn runs these stages in order and keeps every intermediate artifact:
//!
//! 1. the dialog history is rewritten into a standalone search query;
//! 2. the query is offered to the text-to-SQL stage, which may restrict the
//!    searchable entries;
//! 3. hybrid search ranks the (possibly restricted) entries;
//! 4. the answer model writes a reply citing fragments as `[n]`;
//! 5. markers become links to the cited entries.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use rand::RngCore;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionParams, HybridIndex, ScoredCandidate};
use crate::kb::{Entry, KnowledgeBase, UrlTemplate};
use crate::llm::{ChatGateway, ChatMessage, CompletionRequest, ModelRoles, Role};
use crate::sql::{default_few_shots, sql_filter, FewShot};
use crate::vector::EmbeddingProvider;

const QUERY_PROMPT: &str = include_str!("../prompts/query_generation.v1.txt");
const ANSWER_SYSTEM: &str = include_str!("../prompts/answer_system.v1.txt");
const ANSWER_USER: &str = include_str!("../prompts/answer_user.v1.txt");

/// Reply used when retrieval returns nothing; no model call is made.
pub const NO_SOURCES_ANSWER: &str =
    "No sources in the archive matched this question, so I cannot answer it from the collection.";

/// Reply used when the answer model cannot be reached.
pub const DEGRADED_ANSWER: &str =
    "Sorry, the answer service is unavailable right now. The retrieved sources are listed below; please try again later.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantConfig {
    pub models: ModelRoles,
    pub fusion: FusionParams,
    /// Number of most recent messages passed to query generation.
    pub history_window: usize,
    pub url_template: UrlTemplate,
    pub few_shots: Vec<FewShot>,
    pub max_answer_tokens: u32,
}

impl Default for AssistantConfig {
    fn default() -> Self {
        AssistantConfig {
            models: ModelRoles::default(),
            fusion: FusionParams::default(),
            history_window: 10,
            url_template: UrlTemplate::default(),
            few_shots: default_few_shots(),
            max_answer_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub marker: usize,
    pub entry_id: i64,
    pub url: String,
}

/// Entry id and link target for one fragment shown to the answer model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub entry_id: i64,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub user_text: String,
    pub generated_query: String,
    /// True when query generation failed and the user text was used instead.
    pub query_fallback: bool,
    pub sql: Option<String>,
    pub sql_filter: Option<BTreeSet<i64>>,
    pub candidates: Vec<ScoredCandidate>,
    pub answer_raw: String,
    pub answer_rendered: String,
    pub citations: Vec<Citation>,
    /// Out-of-range markers removed from the answer.
    pub repairs: usize,
    /// True when the answer is the unavailable-service apology.
    pub degraded: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub turns: Vec<Turn>,
}

impl Session {
    /// Session with a fresh 128-bit random id.
    pub fn new() -> Self {
        let mut bytes = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut bytes);
        Session { id: hex::encode(bytes), created_at: Utc::now(), turns: Vec::new() }
    }

    /// Prior turns as alternating user/assistant messages.
    pub fn history(&self) -> Vec<ChatMessage> {
        let mut out = Vec::with_capacity(self.turns.len() * 2);
        for t in &self.turns {
            out.push(ChatMessage::user(t.user_text.clone()));
            out.push(ChatMessage::assistant(t.answer_raw.clone()));
        }
        out
    }
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

/// Query generation request for `history`, which must end with a user message.
pub fn query_request(model_id: &str, history: &[ChatMessage], window: usize) -> Result<CompletionRequest> {
    if history.last().map(|m| m.role) != Some(Role::User) {
        return Err(Error::invalid("history must end with a user message"));
    }
    let start = history.len().saturating_sub(window.max(1));
    let mut messages = vec![ChatMessage::system(QUERY_PROMPT)];
    messages.extend(history[start..].iter().cloned());
    Ok(CompletionRequest::new(model_id, messages).with_max_tokens(64))
}

/// Rewrites the dialog into a one-line search query.
///
/// Returns the query and whether the fallback (last user message) was used.
pub fn generate_search_query(
    gateway: &dyn ChatGateway,
    model_id: &str,
    history: &[ChatMessage],
    window: usize,
) -> Result<(String, bool)> {
    let request = query_request(model_id, history, window)?;
    let last = history.last().expect("checked by query_request").content.clone();
    match gateway.complete(&request) {
        Ok(reply) => {
            let line = reply.lines().map(|l| l.trim().trim_matches('"').trim()).find(|l| !l.is_empty());
            match line {
                Some(q) => Ok((q.to_string(), false)),
                None => {
                    tracing::warn!("query generation returned an empty reply; using the user message");
                    Ok((last, true))
                }
            }
        }
        Err(e) => {
            tracing::warn!(error = %e, "query generation failed; using the user message");
            Ok((last, true))
        }
    }
}

/// A fragment as shown to the answer model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub date: String,
    pub author: String,
    pub text: String,
}

/// Answer request listing `fragments` as `[1]`, `[2]`, ...
pub fn answer_request(model_id: &str, question: &str, fragments: &[Fragment], max_tokens: u32) -> CompletionRequest {
    let mut listed = String::new();
    for (i, f) in fragments.iter().enumerate() {
        listed.push_str(&format!("[{}] {}, {}\n{}\n\n", i + 1, f.date, f.author, f.text.trim()));
    }
    let user = ANSWER_USER.replace("{question}", question.trim()).replace("{fragments}", &listed);
    CompletionRequest::new(model_id, vec![ChatMessage::system(ANSWER_SYSTEM), ChatMessage::user(user)])
        .with_max_tokens(max_tokens)
}

/// Answer text and whether it is the degraded apology.
pub fn generate_answer(
    gateway: &dyn ChatGateway,
    model_id: &str,
    question: &str,
    fragments: &[Fragment],
    max_tokens: u32,
) -> (String, bool) {
    if fragments.is_empty() {
        return (NO_SOURCES_ANSWER.to_string(), false);
    }
    match gateway.complete(&answer_request(model_id, question, fragments, max_tokens)) {
        Ok(answer) => (answer, false),
        Err(e) => {
            tracing::warn!(error = %e, "answer generation failed");
            (DEGRADED_ANSWER.to_string(), true)
        }
    }
}

fn marker_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[(\d+)\]").expect("valid regex"))
}

/// Replaces each in-range `[n]` with a markdown link to `sources[n - 1]` and
/// strips the rest.
///
/// Returns the rendered text, one citation per distinct marker in order of
/// first appearance, and the number of markers stripped.
///
/// ```
/// use chronicle::assistant::{insert_hyperlinks, Source};
///
/// let sources = [Source { entry_id: 42, url: "http://h/entry/42".into() }];
/// let (text, cites, repairs) = insert_hyperlinks("Snow fell [1][9].", &sources);
/// assert_eq!(text, "Snow fell [[1]](http://h/entry/42).");
/// assert_eq!((cites.len(), repairs), (1, 1));
/// ```
pub fn insert_hyperlinks(answer_raw: &str, sources: &[Source]) -> (String, Vec<Citation>, usize) {
    let mut citations: Vec<Citation> = Vec::new();
    let mut repairs = 0;
    let rendered = marker_regex().replace_all(answer_raw, |caps: &regex::Captures<'_>| {
        let n = caps[1].parse::<usize>().unwrap_or(0);
        match n.checked_sub(1).and_then(|i| sources.get(i)) {
            Some(src) => {
                if !citations.iter().any(|c| c.marker == n) {
                    citations.push(Citation { marker: n, entry_id: src.entry_id, url: src.url.clone() });
                }
                format!("[[{n}]]({})", src.url)
            }
            None => {
                repairs += 1;
                String::new()
            }
        }
    });
    (rendered.into_owned(), citations, repairs)
}

/// Owns the stores and gateways and the live sessions.
pub struct Assistant {
    kb: Arc<KnowledgeBase>,
    index: RwLock<Arc<HybridIndex>>,
    provider: Arc<dyn EmbeddingProvider>,
    gateway: Arc<dyn ChatGateway>,
    config: AssistantConfig,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
}

impl Assistant {
    pub fn new(
        kb: Arc<KnowledgeBase>,
        index: HybridIndex,
        provider: Arc<dyn EmbeddingProvider>,
        gateway: Arc<dyn ChatGateway>,
        config: AssistantConfig,
    ) -> Result<Self> {
        config.fusion.validate()?;
        Ok(Assistant {
            kb,
            index: RwLock::new(Arc::new(index)),
            provider,
            gateway,
            config,
            sessions: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn config(&self) -> &AssistantConfig {
        &self.config
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        self.provider.as_ref()
    }

    /// Snapshot of the current index; turns in flight keep the one they started with.
    pub fn index(&self) -> Arc<HybridIndex> {
        self.index.read().expect("index lock").clone()
    }

    pub fn replace_index(&self, index: HybridIndex) {
        *self.index.write().expect("index lock") = Arc::new(index);
    }

    /// Rebuilds the index from the knowledge base.
    pub fn reindex(&self) -> Result<()> {
        let analyzer = self.index().lexical().map(|l| l.analyzer().clone()).unwrap_or_default();
        let index = HybridIndex::build(&self.kb, self.provider.as_ref(), analyzer, &self.config.fusion.fields)?;
        self.replace_index(index);
        Ok(())
    }

    pub fn create_session(&self) -> String {
        let session = Session::new();
        let id = session.id.clone();
        self.sessions.lock().expect("session table lock").insert(id.clone(), Arc::new(Mutex::new(session)));
        id
    }

    fn session_handle(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn session(&self, id: &str) -> Result<Session> {
        Ok(self.session_handle(id)?.lock().expect("session lock").clone())
    }

    /// Link target for each candidate; an entry's own `source_url` wins over the template.
    pub fn sources(&self, candidates: &[ScoredCandidate]) -> Result<Vec<Source>> {
        candidates
            .iter()
            .map(|c| {
                let entry = self.kb.get_entry(c.entry_id)?;
                Ok(Source { entry_id: entry.id, url: entry.url(&self.config.url_template) })
            })
            .collect()
    }

    fn fragments(&self, candidates: &[ScoredCandidate]) -> Result<Vec<Fragment>> {
        let mut authors = BTreeMap::new();
        candidates
            .iter()
            .map(|c| {
                let entry: Entry = self.kb.get_entry(c.entry_id)?;
                if let std::collections::btree_map::Entry::Vacant(v) = authors.entry(entry.author_id) {
                    v.insert(self.kb.get_author(entry.author_id)?.name);
                }
                Ok(Fragment {
                    date: entry.date.to_string(),
                    author: authors[&entry.author_id].clone(),
                    text: entry.text,
                })
            })
            .collect()
    }

    /// Runs one turn in session `session_id` and appends it.
    ///
    /// Turns within one session run one at a time.
    pub fn handle_turn(&self, session_id: &str, user_text: &str, params: Option<&FusionParams>) -> Result<Turn> {
        let handle = self.session_handle(session_id)?;
        let mut session = handle.lock().expect("session lock");
        let turn = self.run_turn(&session, user_text, params.unwrap_or(&self.config.fusion))?;
        session.turns.push(turn.clone());
        Ok(turn)
    }

    /// Runs the pipeline for `user_text` against `session`'s history without storing anything.
    pub fn run_turn(&self, session: &Session, user_text: &str, params: &FusionParams) -> Result<Turn> {
        if user_text.trim().is_empty() {
            return Err(Error::invalid("user text is empty"));
        }
        params.validate()?;
        let mut warnings = Vec::new();
        let gateway = self.gateway.as_ref();
        let models = &self.config.models;

        let mut history = session.history();
        history.push(ChatMessage::user(user_text));
        let (generated_query, query_fallback) =
            generate_search_query(gateway, &models.query_gen, &history, self.config.history_window)?;
        if query_fallback {
            warnings.push("query generation failed; searched with the user message".to_string());
        }

        let filter = sql_filter(gateway, &models.sql_gen, &self.kb, &generated_query, &self.config.few_shots);
        warnings.extend(filter.warning.clone());

        let index = self.index();
        let candidates =
            index.hybrid_search(self.provider.as_ref(), &generated_query, params, filter.filter.as_ref())?;

        let fragments = self.fragments(&candidates)?;
        let (answer_raw, degraded) =
            generate_answer(gateway, &models.answer_gen, user_text, &fragments, self.config.max_answer_tokens);
        if degraded {
            warnings.push("answer generation failed".to_string());
        }
        let sources = self.sources(&candidates)?;
        let (answer_rendered, citations, repairs) = if degraded {
            // the apology promises the retrieved sources, so list them all
            let citations: Vec<Citation> = sources
                .iter()
                .enumerate()
                .map(|(i, s)| Citation { marker: i + 1, entry_id: s.entry_id, url: s.url.clone() })
                .collect();
            let mut rendered = answer_raw.clone();
            for c in &citations {
                rendered.push_str(&format!("\n- [[{}]]({})", c.marker, c.url));
            }
            (rendered, citations, 0)
        } else {
            insert_hyperlinks(&answer_raw, &sources)
        };

        Ok(Turn {
            user_text: user_text.to_string(),
            generated_query,
            query_fallback,
            sql: filter.sql,
            sql_filter: filter.filter,
            candidates,
            answer_raw,
            answer_rendered,
            citations,
            repairs,
            degraded,
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sources(n: usize) -> Vec<Source> {
        (1..=n as i64).map(|i| Source { entry_id: i * 10, url: format!("http://h/entry/{}", i * 10) }).collect()
    }

    #[test]
    fn hyperlinks_rules() {
        let (text, cites, repairs) = insert_hyperlinks("A [1] and B [3] and again [1].", &sources(5));
        assert_eq!(
            text,
            "A [[1]](http://h/entry/10) and B [[3]](http://h/entry/30) and again [[1]](http://h/entry/10)."
        );
        assert_eq!(cites.iter().map(|c| (c.marker, c.entry_id)).collect::<Vec<_>>(), vec![(1, 10), (3, 30)]);
        assert_eq!(repairs, 0);

        let (text, cites, repairs) = insert_hyperlinks("Bad [9] and [0].", &sources(5));
        assert_eq!(text, "Bad  and .");
        assert!(cites.is_empty());
        assert_eq!(repairs, 2);

        let (text, cites, repairs) = insert_hyperlinks("No markers here.", &sources(2));
        assert_eq!(text, "No markers here.");
        assert!(cites.is_empty() && repairs == 0);
    }

    #[test]
    fn query_request_windows_history() {
        let history: Vec<ChatMessage> =
            (0..15)
                .map(|i| {
                    if i % 2 == 0 {
                        ChatMessage::user(format!("u{i}"))
                    } else {
                        ChatMessage::assistant(format!("a{i}"))
                    }
                })
                .collect();
        let req = query_request("m", &history, 10).unwrap();
        assert_eq!(req.messages.len(), 11);
        assert_eq!(req.messages[0].role, Role::System);
        assert_eq!(req.messages[1].content, "a5");
        assert!(query_request("m", &history[..2], 10).is_err());
    }

    #[test]
    fn answer_prompt_contains_question_and_fragments() {
        let frags: Vec<Fragment> = (1..=5)
            .map(|i| Fragment { date: "1900-01-01".into(), author: "A".into(), text: format!("fragment text {i}") })
            .collect();
        let req = answer_request("m", "What happened?", &frags, 100);
        let user = &req.messages[1].content;
        assert!(user.contains("What happened?"));
        for i in 1..=5 {
            assert!(user.contains(&format!("[{i}] 1900-01-01, A\nfragment text {i}")));
        }
    }

    #[test]
    fn no_fragments_skips_the_model() {
        let stub = crate::llm::ScriptedStub::new();
        let (answer, degraded) = generate_answer(&stub, "m", "q", &[], 100);
        assert_eq!(answer, NO_SOURCES_ANSWER);
        assert!(!degraded);
        assert_eq!(stub.calls(), 0);
    }

    #[test]
    fn session_ids_are_128_bit_hex() {
        let a = Session::new();
        let b = Session::new();
        assert_eq!(a.id.len(), 32);
        assert!(a.id.chars().all(|c| c.is_ascii_hexdigit()));
        assert_ne!(a.id, b.id);
    }
}
