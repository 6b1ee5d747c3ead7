//! Relational knowledge base: authors and their diary entries.
//!
//! Backed by an embedded SQLite database. Ingestion is batch-oriented and
//! transactional; SQL access from outside the crate goes exclusively through
//! [`KnowledgeBase::execute_select`], which only runs queries the SQL guard
//! has accepted.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::Mutex;

use chrono::NaiveDate;
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sql::SqlQuery;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Author {
    pub id: i64,
    pub name: String,
    #[serde(default)]
    pub birth_date: Option<NaiveDate>,
    #[serde(default)]
    pub death_date: Option<NaiveDate>,
    #[serde(default)]
    pub bio: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub id: i64,
    pub author_id: i64,
    pub date: NaiveDate,
    pub text: String,
    #[serde(default)]
    pub source_url: Option<String>,
}

impl Author {
    fn check(&self) -> std::result::Result<(), String> {
        if let (Some(born), Some(died)) = (self.birth_date, self.death_date) {
            if born > died {
                return Err(format!("author {}: birth_date {born} is after death_date {died}", self.id));
            }
        }
        Ok(())
    }
}

impl Entry {
    fn check(&self) -> std::result::Result<(), String> {
        if self.text.trim().is_empty() {
            return Err(format!("entry {}: text is empty", self.id));
        }
        Ok(())
    }

    /// Link target for this entry: its own `source_url` if present,
    /// otherwise the template filled with the entry id.
    pub fn url(&self, template: &UrlTemplate) -> String {
        match &self.source_url {
            Some(url) => url.clone(),
            None => template.resolve(self.id),
        }
    }
}

/// Hyperlink template with an `{id}` placeholder, e.g. `https://archive.example/entry/{id}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UrlTemplate(String);

impl UrlTemplate {
    pub fn new(template: impl Into<String>) -> Self {
        UrlTemplate(template.into())
    }

    /// `<base_url>/entry/{id}`
    pub fn from_base_url(base_url: &str) -> Self {
        UrlTemplate(format!("{}/entry/{{id}}", base_url.trim_end_matches('/')))
    }

    pub fn resolve(&self, id: i64) -> String {
        self.0.replace("{id}", &id.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for UrlTemplate {
    fn default() -> Self {
        UrlTemplate::from_base_url("http://localhost:8080")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(Error::Format(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestCounts {
    pub entries: usize,
    pub authors: usize,
}

/// One line of a jsonl corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CorpusRecord {
    Author(Author),
    Entry(Entry),
}

/// One row of a csv corpus file. Columns irrelevant to the row's `type` stay empty.
#[derive(Debug, Deserialize)]
struct CsvRow {
    #[serde(rename = "type")]
    kind: String,
    id: i64,
    #[serde(default)]
    author_id: Option<i64>,
    #[serde(default)]
    date: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    source_url: Option<String>,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    birth_date: Option<String>,
    #[serde(default)]
    death_date: Option<String>,
    #[serde(default)]
    bio: Option<String>,
}

/// Header line expected by the csv ingestion format.
pub const CSV_HEADER: &str = "type,id,author_id,date,text,source_url,name,birth_date,death_date,bio";

fn parse_date(raw: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|e| format!("bad date {raw:?}: {e}"))
}

fn parse_opt_date(raw: Option<String>) -> std::result::Result<Option<NaiveDate>, String> {
    match raw.as_deref().map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => parse_date(s).map(Some),
    }
}

impl CsvRow {
    fn into_record(self) -> std::result::Result<CorpusRecord, String> {
        let nonempty = |v: Option<String>| v.filter(|s| !s.is_empty());
        match self.kind.as_str() {
            "author" => Ok(CorpusRecord::Author(Author {
                id: self.id,
                name: self.name.unwrap_or_default(),
                birth_date: parse_opt_date(self.birth_date)?,
                death_date: parse_opt_date(self.death_date)?,
                bio: self.bio.unwrap_or_default(),
            })),
            "entry" => Ok(CorpusRecord::Entry(Entry {
                id: self.id,
                author_id: self.author_id.ok_or("entry row without author_id")?,
                date: parse_date(self.date.as_deref().ok_or("entry row without date")?)?,
                text: self.text.unwrap_or_default(),
                source_url: nonempty(self.source_url),
            })),
            other => Err(format!("unknown record type {other:?}")),
        }
    }
}

/// Parses a corpus stream into records tagged with their 1-based line numbers.
pub fn parse_corpus(source: impl Read, format: CorpusFormat) -> Result<Vec<(usize, CorpusRecord)>> {
    let mut out = Vec::new();
    match format {
        CorpusFormat::Jsonl => {
            for (idx, line) in BufReader::new(source).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CorpusRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::MalformedRecord { line: idx + 1, message: e.to_string() })?;
                out.push((idx + 1, record));
            }
        }
        CorpusFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().from_reader(source);
            let headers =
                reader.headers().map_err(|e| Error::MalformedRecord { line: 1, message: e.to_string() })?.clone();
            for raw in reader.records() {
                let raw = raw.map_err(|e| Error::MalformedRecord {
                    line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                    message: e.to_string(),
                })?;
                let line = raw.position().map(|p| p.line() as usize).unwrap_or(0);
                let record = raw
                    .deserialize::<CsvRow>(Some(&headers))
                    .map_err(|e| e.to_string())
                    .and_then(CsvRow::into_record)
                    .map_err(|message| Error::MalformedRecord { line, message })?;
                out.push((line, record));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDescription {
    pub name: String,
    pub sql_type: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub column: String,
    pub references_table: String,
    pub references_column: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDescription {
    pub name: String,
    pub description: String,
    pub columns: Vec<ColumnDescription>,
    pub relations: Vec<Relation>,
}

/// Tables, columns and relations exposed to text-to-SQL generation and to the SQL guard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDescription {
    pub tables: Vec<TableDescription>,
}

fn col(name: &str, sql_type: &str, description: &str) -> ColumnDescription {
    ColumnDescription { name: name.into(), sql_type: sql_type.into(), description: description.into() }
}

impl SchemaDescription {
    /// The schema of the built-in `authors` / `entries` store.
    pub fn archive() -> Self {
        SchemaDescription {
            tables: vec![
                TableDescription {
                    name: "authors".into(),
                    description: "People who wrote diary entries.".into(),
                    columns: vec![
                        col("id", "INTEGER", "Unique author identifier."),
                        col("name", "TEXT", "Full name of the author."),
                        col("birth_date", "TEXT", "Date of birth as YYYY-MM-DD, NULL if unknown."),
                        col("death_date", "TEXT", "Date of death as YYYY-MM-DD, NULL if unknown."),
                        col("bio", "TEXT", "Short free-text biography, may be empty."),
                    ],
                    relations: vec![],
                },
                TableDescription {
                    name: "entries".into(),
                    description: "Individual diary entries; each is one retrievable passage.".into(),
                    columns: vec![
                        col("id", "INTEGER", "Unique entry identifier."),
                        col("author_id", "INTEGER", "Author of the entry, references authors.id."),
                        col("date", "TEXT", "Date the entry was written, YYYY-MM-DD."),
                        col("text", "TEXT", "Full text of the entry."),
                        col("source_url", "TEXT", "Link to the entry in the original archive, NULL if unset."),
                    ],
                    relations: vec![Relation {
                        column: "author_id".into(),
                        references_table: "authors".into(),
                        references_column: "id".into(),
                        description: "each author has many entries".into(),
                    }],
                },
            ],
        }
    }

    pub fn table(&self, name: &str) -> Option<&TableDescription> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Deterministic text rendering used inside prompts. One line per column.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for table in &self.tables {
            out.push_str(&format!("TABLE {} -- {}\n", table.name, table.description));
            for c in &table.columns {
                out.push_str(&format!("  {} {} -- {}\n", c.name, c.sql_type, c.description));
            }
        }
        out.push_str("RELATIONS\n");
        for table in &self.tables {
            for r in &table.relations {
                out.push_str(&format!(
                    "  {}.{} -> {}.{} ({})\n",
                    table.name, r.column, r.references_table, r.references_column, r.description
                ));
            }
        }
        out
    }
}

/// A single SQL value as returned by [`KnowledgeBase::execute_select`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SqlValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RowSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<SqlValue>>,
}

impl RowSet {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Integer values of the column named `id` (or the first column when
    /// there is none), suitable as an entry-id filter.
    pub fn id_set(&self) -> Result<BTreeSet<i64>> {
        let idx = self.columns.iter().position(|c| c.eq_ignore_ascii_case("id")).unwrap_or(0);
        let mut ids = BTreeSet::new();
        for row in &self.rows {
            match row.get(idx) {
                Some(SqlValue::Integer(v)) => {
                    ids.insert(*v);
                }
                Some(SqlValue::Null) | None => {}
                Some(other) => {
                    return Err(Error::ExecutionFailed(format!(
                        "expected integer ids in column {idx}, found {other:?}"
                    )))
                }
            }
        }
        Ok(ids)
    }
}

const DDL: &str = "
CREATE TABLE IF NOT EXISTS authors (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    birth_date TEXT,
    death_date TEXT,
    bio TEXT NOT NULL DEFAULT ''
);
CREATE TABLE IF NOT EXISTS entries (
    id INTEGER PRIMARY KEY,
    author_id INTEGER NOT NULL REFERENCES authors(id) DEFERRABLE INITIALLY DEFERRED,
    date TEXT NOT NULL,
    text TEXT NOT NULL,
    source_url TEXT
);
CREATE INDEX IF NOT EXISTS entries_author ON entries(author_id);
CREATE INDEX IF NOT EXISTS entries_date ON entries(date);
";

/// The relational store. All methods take `&self`; the connection is
/// guarded by a mutex so the store can be shared across threads.
pub struct KnowledgeBase {
    conn: Mutex<Connection>,
    schema: SchemaDescription,
}

impl std::fmt::Debug for KnowledgeBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeBase").finish_non_exhaustive()
    }
}

fn date_to_sql(d: Option<NaiveDate>) -> Option<String> {
    d.map(|d| d.format("%Y-%m-%d").to_string())
}

/// id, name, birth_date, death_date, bio as stored.
type AuthorRow = (i64, String, Option<String>, Option<String>, String);

fn row_to_author(row: &rusqlite::Row<'_>) -> rusqlite::Result<AuthorRow> {
    Ok((row.get(0)?, row.get(1)?, row.get(2)?, row.get(3)?, row.get(4)?))
}

fn author_from_parts(parts: (i64, String, Option<String>, Option<String>, String)) -> Result<Author> {
    let (id, name, birth, death, bio) = parts;
    let conv = |s: Option<String>| -> Result<Option<NaiveDate>> { parse_opt_date(s).map_err(Error::Integrity) };
    Ok(Author { id, name, birth_date: conv(birth)?, death_date: conv(death)?, bio })
}

fn entry_from_parts(parts: (i64, i64, String, String, Option<String>)) -> Result<Entry> {
    let (id, author_id, date, text, source_url) = parts;
    Ok(Entry { id, author_id, date: parse_date(&date).map_err(Error::Integrity)?, text, source_url })
}

impl KnowledgeBase {
    pub fn open_in_memory() -> Result<Self> {
        Self::from_connection(Connection::open_in_memory()?)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_connection(Connection::open(path)?)
    }

    fn from_connection(conn: Connection) -> Result<Self> {
        conn.execute_batch(DDL)?;
        Ok(KnowledgeBase { conn: Mutex::new(conn), schema: SchemaDescription::archive() })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    /// Parses and loads a corpus stream. The whole batch is rejected on the
    /// first malformed record or dangling author reference.
    pub fn ingest(&self, source: impl Read, format: CorpusFormat) -> Result<IngestCounts> {
        let records = parse_corpus(source, format)?;
        self.insert_records(records)
    }

    /// Loads already-parsed authors and entries (line numbers are synthesized).
    pub fn insert(&self, authors: &[Author], entries: &[Entry]) -> Result<IngestCounts> {
        let records = authors
            .iter()
            .cloned()
            .map(CorpusRecord::Author)
            .chain(entries.iter().cloned().map(CorpusRecord::Entry))
            .enumerate()
            .map(|(i, r)| (i + 1, r))
            .collect();
        self.insert_records(records)
    }

    fn insert_records(&self, records: Vec<(usize, CorpusRecord)>) -> Result<IngestCounts> {
        let mut seen_authors = BTreeSet::new();
        let mut seen_entries = BTreeSet::new();
        for (line, record) in &records {
            let (check, fresh) = match record {
                CorpusRecord::Author(a) => (a.check(), seen_authors.insert(a.id)),
                CorpusRecord::Entry(e) => (e.check(), seen_entries.insert(e.id)),
            };
            check.map_err(|message| Error::MalformedRecord { line: *line, message })?;
            if !fresh {
                return Err(Error::MalformedRecord { line: *line, message: "duplicate id within batch".into() });
            }
        }

        let mut conn = self.lock();
        let tx = conn.transaction()?;
        {
            let mut put_author = tx.prepare(
                "INSERT INTO authors (id, name, birth_date, death_date, bio) VALUES (?1, ?2, ?3, ?4, ?5)
                 ON CONFLICT(id) DO UPDATE SET name = excluded.name, birth_date = excluded.birth_date,
                 death_date = excluded.death_date, bio = excluded.bio",
            )?;
            let mut put_entry = tx.prepare(
                "INSERT INTO entries (id, author_id, date, text, source_url) VALUES (?1, ?2, ?3, ?4, ?5)
                 ON CONFLICT(id) DO UPDATE SET author_id = excluded.author_id, date = excluded.date,
                 text = excluded.text, source_url = excluded.source_url",
            )?;
            for (_, record) in &records {
                match record {
                    CorpusRecord::Author(a) => {
                        put_author.execute(params![
                            a.id,
                            a.name,
                            date_to_sql(a.birth_date),
                            date_to_sql(a.death_date),
                            a.bio
                        ])?;
                    }
                    CorpusRecord::Entry(e) => {
                        put_entry.execute(params![
                            e.id,
                            e.author_id,
                            date_to_sql(Some(e.date)),
                            e.text,
                            e.source_url
                        ])?;
                    }
                }
            }
        }
        let dangling: Option<(i64, i64)> = tx
            .query_row(
                "SELECT e.id, e.author_id FROM entries e LEFT JOIN authors a ON a.id = e.author_id
                 WHERE a.id IS NULL ORDER BY e.id LIMIT 1",
                [],
                |row| Ok((row.get(0)?, row.get(1)?)),
            )
            .optional()?;
        if let Some((entry, author)) = dangling {
            // dropping the transaction rolls back
            return Err(Error::Integrity(format!("entry {entry} references unknown author_id {author}")));
        }
        tx.commit()?;
        Ok(IngestCounts { entries: seen_entries.len(), authors: seen_authors.len() })
    }

    pub fn get_entry(&self, id: i64) -> Result<Entry> {
        let conn = self.lock();
        let parts = conn
            .query_row("SELECT id, author_id, date, text, source_url FROM entries WHERE id = ?1", [id], |r| {
                Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?))
            })
            .optional()?
            .ok_or(Error::NotFound { kind: "entry", id })?;
        entry_from_parts(parts)
    }

    pub fn get_author(&self, id: i64) -> Result<Author> {
        let conn = self.lock();
        let parts = conn
            .query_row("SELECT id, name, birth_date, death_date, bio FROM authors WHERE id = ?1", [id], row_to_author)
            .optional()?
            .ok_or(Error::NotFound { kind: "author", id })?;
        author_from_parts(parts)
    }

    /// All entries, ordered by id.
    pub fn entries(&self) -> Result<Vec<Entry>> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT id, author_id, date, text, source_url FROM entries ORDER BY id")?;
        let rows = stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?)))?;
        rows.map(|r| entry_from_parts(r?)).collect()
    }

    /// All authors, ordered by id.
    pub fn authors(&self) -> Result<Vec<Author>> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT id, name, birth_date, death_date, bio FROM authors ORDER BY id")?;
        let rows = stmt.query_map([], row_to_author)?;
        rows.map(|r| author_from_parts(r?)).collect()
    }

    pub fn counts(&self) -> Result<IngestCounts> {
        let conn = self.lock();
        let entries: i64 = conn.query_row("SELECT COUNT(*) FROM entries", [], |r| r.get(0))?;
        let authors: i64 = conn.query_row("SELECT COUNT(*) FROM authors", [], |r| r.get(0))?;
        Ok(IngestCounts { entries: entries as usize, authors: authors as usize })
    }

    /// Runs a guard-accepted SELECT on a read-only connection state.
    pub fn execute_select(&self, query: &SqlQuery) -> Result<RowSet> {
        let sql = query.accepted_text().ok_or_else(|| {
            Error::NotValidated(query.verdict().reason.map(|r| r.to_string()).unwrap_or_else(|| "rejected".into()))
        })?;
        let conn = self.lock();
        conn.pragma_update(None, "query_only", true)?;
        let result = run_select(&conn, sql);
        conn.pragma_update(None, "query_only", false)?;
        result
    }

    pub fn schema(&self) -> &SchemaDescription {
        &self.schema
    }

    pub fn render_schema_description(&self) -> String {
        self.schema.render()
    }

    /// Column names per table as the engine sees them.
    pub fn physical_columns(&self, table: &str) -> Result<Vec<String>> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT name FROM pragma_table_info(?1) ORDER BY cid")?;
        let names = stmt.query_map([table], |r| r.get::<_, String>(0))?;
        Ok(names.collect::<rusqlite::Result<_>>()?)
    }

    /// SHA-256 over a canonical dump of both tables.
    pub fn content_hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for a in self.authors()? {
            hasher.update(serde_json::to_vec(&a)?);
            hasher.update(b"\n");
        }
        for e in self.entries()? {
            hasher.update(serde_json::to_vec(&e)?);
            hasher.update(b"\n");
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

fn run_select(conn: &Connection, sql: &str) -> Result<RowSet> {
    let exec = |e: rusqlite::Error| Error::ExecutionFailed(e.to_string());
    let mut stmt = conn.prepare(sql).map_err(exec)?;
    if !stmt.readonly() {
        return Err(Error::ExecutionFailed("statement is not read-only".into()));
    }
    let columns: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
    let width = columns.len();
    let mut rows = stmt.query([]).map_err(exec)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next().map_err(exec)? {
        let mut values = Vec::with_capacity(width);
        for i in 0..width {
            use rusqlite::types::ValueRef;
            let v = match row.get_ref(i).map_err(exec)? {
                ValueRef::Null => SqlValue::Null,
                ValueRef::Integer(v) => SqlValue::Integer(v),
                ValueRef::Real(v) => SqlValue::Real(v),
                ValueRef::Text(t) => SqlValue::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(_) => SqlValue::Text("<blob>".into()),
            };
            values.push(v);
        }
        out.push(values);
    }
    Ok(RowSet { columns, rows: out })
}
