use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{SqlOrigin, SqlQuery};
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, SchemaDescription};
use crate::llm::{ChatGateway, ChatMessage, CompletionRequest};

/// Reply the model gives when a question places no condition on structured fields.
pub const NO_FILTER: &str = "NO_FILTER";

const TEMPLATE: &str = include_str!("../../prompts/text2sql.v1.txt");
const EXAMPLES: &str = include_str!("../../prompts/text2sql_examples.v1.json");

/// One worked example shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShot {
    pub question: String,
    pub reasoning: String,
    /// Expected final answer, either a fenced SQL block or [`NO_FILTER`].
    pub answer: String,
}

/// Examples shipped in `prompts/text2sql_examples.v1.json`.
pub fn default_few_shots() -> Vec<FewShot> {
    serde_json::from_str(EXAMPLES).expect("bundled few-shot file is valid JSON")
}

/// Fills the versioned template with the schema, examples and question.
pub fn build_text2sql_prompt(question: &str, schema: &SchemaDescription, few_shots: &[FewShot]) -> String {
    let mut examples = String::new();
    if few_shots.is_empty() {
        examples.push_str("(none)\n");
    }
    for (i, shot) in few_shots.iter().enumerate() {
        examples.push_str(&format!(
            "Example {}\nQuestion: {}\nReasoning: {}\nAnswer:\n{}\n\n",
            i + 1,
            shot.question.trim(),
            shot.reasoning.trim(),
            shot.answer.trim()
        ));
    }
    TEMPLATE
        .replace("{schema}", &schema.render())
        .replace("{examples}", &examples)
        .replace("{question}", question.trim())
}

fn fence_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\r?\n(.*?)```").expect("valid regex"))
}

fn strip_semicolon(sql: &str) -> String {
    sql.trim().trim_end_matches(';').trim_end().to_string()
}

/// Pulls the final SQL statement out of a chain-of-thought completion.
///
/// The last fenced block wins; without one, the last line that starts with
/// a word and ends in `;` is used.
pub fn extract_sql(completion: &str) -> Result<String> {
    if let Some(block) = fence_regex().captures_iter(completion).last() {
        let sql = strip_semicolon(&block[1]);
        return if sql.is_empty() { Err(Error::ExtractionFailed) } else { Ok(sql) };
    }
    completion
        .lines()
        .map(str::trim)
        .rfind(|l| l.ends_with(';') && l.chars().next().is_some_and(|c| c.is_ascii_alphabetic()))
        .map(strip_semicolon)
        .filter(|s| !s.is_empty())
        .ok_or(Error::ExtractionFailed)
}

fn is_no_filter(completion: &str) -> bool {
    let last = completion.lines().map(str::trim).rfind(|l| !l.is_empty() && !l.starts_with("```"));
    last.is_some_and(|l| l.trim_matches('`').trim() == NO_FILTER)
}

/// What the filtering stage produced for one question.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlFilterOutcome {
    /// Matching entry ids; `None` means search runs unfiltered.
    pub filter: Option<BTreeSet<i64>>,
    /// Statement that was validated, if one was extracted.
    pub sql: Option<String>,
    pub warning: Option<String>,
}

impl SqlFilterOutcome {
    fn degraded(sql: Option<String>, warning: String) -> Self {
        tracing::warn!(%warning, "SQL filter skipped");
        SqlFilterOutcome { filter: None, sql, warning: Some(warning) }
    }
}

/// Generates, validates and runs a SQL filter for `question`.
///
/// Any failure yields an unfiltered outcome with a warning; gateway errors
/// included. The request is sent at temperature 0.
pub fn sql_filter(
    gateway: &dyn ChatGateway,
    model_id: &str,
    kb: &KnowledgeBase,
    question: &str,
    few_shots: &[FewShot],
) -> SqlFilterOutcome {
    let prompt = build_text2sql_prompt(question, kb.schema(), few_shots);
    let request = CompletionRequest::new(model_id, vec![ChatMessage::user(prompt)]).with_temperature(0.0);
    let completion = match gateway.complete(&request) {
        Ok(c) => c,
        Err(e) => return SqlFilterOutcome::degraded(None, format!("sql generation failed: {e}")),
    };
    if is_no_filter(&completion) {
        return SqlFilterOutcome::default();
    }
    let sql = match extract_sql(&completion) {
        Ok(s) => s,
        Err(e) => return SqlFilterOutcome::degraded(None, e.to_string()),
    };
    let query = SqlQuery::check(sql.clone(), SqlOrigin::Llm, kb.schema());
    if let Some(reason) = query.verdict().reason {
        let detail = &query.verdict().detail;
        return SqlFilterOutcome::degraded(Some(sql), format!("SQL rejected ({reason}): {detail}"));
    }
    match kb.execute_select(&query).and_then(|rows| rows.id_set()) {
        Ok(ids) => SqlFilterOutcome { filter: Some(ids), sql: Some(sql), warning: None },
        Err(e) => SqlFilterOutcome::degraded(Some(sql), e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_contents() {
        let schema = SchemaDescription::archive();
        let shots = default_few_shots();
        assert!(shots.len() >= 2);
        let p = build_text2sql_prompt("When?", &schema, &shots);
        for t in &schema.tables {
            assert!(p.contains(&t.name));
        }
        assert!(p.contains("step by step"));
        assert!(p.contains("```sql"));
        assert!(p.ends_with("Question: When?\n"));
        assert_eq!(p, build_text2sql_prompt("When?", &schema, &shots));
        let bare = build_text2sql_prompt("When?", &schema, &[]);
        assert!(bare.contains("(none)") && !bare.contains("{examples}"));
    }

    #[test]
    fn extraction_rules() {
        assert_eq!(
            extract_sql("First I think.\n```sql\nSELECT id FROM entries;\n```\nDone.").unwrap(),
            "SELECT id FROM entries"
        );
        assert_eq!(
            extract_sql("```sql\nSELECT 1 FROM entries\n```\nbetter:\n```\nSELECT id FROM authors\n```").unwrap(),
            "SELECT id FROM authors"
        );
        assert_eq!(
            extract_sql("reasoning\nSELECT id FROM entries WHERE id = 1;\n").unwrap(),
            "SELECT id FROM entries WHERE id = 1"
        );
        assert!(matches!(extract_sql("I cannot tell."), Err(Error::ExtractionFailed)));
        assert!(matches!(extract_sql("```sql\n\n```"), Err(Error::ExtractionFailed)));
    }

    #[test]
    fn sentinel_detection() {
        assert!(is_no_filter("NO_FILTER"));
        assert!(is_no_filter("No structured field here.\n`NO_FILTER`\n"));
        assert!(is_no_filter("```\nNO_FILTER\n```"));
        assert!(!is_no_filter("```sql\nSELECT id FROM entries\n```"));
    }
}
