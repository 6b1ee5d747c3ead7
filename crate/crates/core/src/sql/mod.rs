//! SELECT-only SQL guard and the text-to-SQL filtering stage.
//!
//! Every statement that reaches [`KnowledgeBase::execute_select`](crate::KnowledgeBase::execute_select)
//! goes through [`validate_select_only`], a parser for the subset described in
//! `docs/sql-subset.ebnf`, followed by identifier resolution against the
//! [`SchemaDescription`].
//!
//! ```
//! use chronicle::{sql::validate_select_only, SchemaDescription};
//!
//! let schema = SchemaDescription::archive();
//! let ok = validate_select_only("SELECT id FROM entries WHERE date < '1905-01-01'", &schema);
//! assert!(ok.accepted);
//! let bad = validate_select_only("SELECT id FROM entries; DELETE FROM entries", &schema);
//! assert_eq!(bad.reason.unwrap().as_str(), "not_single_statement");
//! ```

mod lexer;
mod parser;
mod text2sql;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kb::SchemaDescription;
use lexer::{tokenize, LexError, Token};
use parser::{Expr, ParseError, Parser, Select, SelectItem};

pub use text2sql::{
    build_text2sql_prompt, default_few_shots, extract_sql, sql_filter, FewShot, SqlFilterOutcome, NO_FILTER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqlOrigin {
    Llm,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NotSingleStatement,
    NotSelect,
    ForbiddenConstruct,
    UnknownIdentifier,
    ParseError,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::NotSingleStatement => "not_single_statement",
            RejectReason::NotSelect => "not_select",
            RejectReason::ForbiddenConstruct => "forbidden_construct",
            RejectReason::UnknownIdentifier => "unknown_identifier",
            RejectReason::ParseError => "parse_error",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of [`validate_select_only`].
///
/// `referenced_tables` holds table names and `referenced_columns` holds
/// `table.column` pairs, both lowercase. They are filled for accepted
/// statements only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardVerdict {
    pub accepted: bool,
    pub reason: Option<RejectReason>,
    pub detail: String,
    pub referenced_tables: BTreeSet<String>,
    pub referenced_columns: BTreeSet<String>,
}

impl GuardVerdict {
    fn reject(reason: RejectReason, detail: impl Into<String>) -> Self {
        GuardVerdict {
            accepted: false,
            reason: Some(reason),
            detail: detail.into(),
            referenced_tables: BTreeSet::new(),
            referenced_columns: BTreeSet::new(),
        }
    }
}

/// SQL text paired with the guard's verdict on it.
///
/// The only way to build one is [`SqlQuery::check`], so a value in hand
/// always carries the verdict computed for its own text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SqlQuery {
    text: String,
    origin: SqlOrigin,
    verdict: GuardVerdict,
}

impl SqlQuery {
    pub fn check(text: impl Into<String>, origin: SqlOrigin, schema: &SchemaDescription) -> Self {
        let text = text.into();
        let verdict = validate_select_only(&text, schema);
        SqlQuery { text, origin, verdict }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn origin(&self) -> SqlOrigin {
        self.origin
    }

    pub fn verdict(&self) -> &GuardVerdict {
        &self.verdict
    }

    /// The text, if and only if the guard accepted it.
    pub fn accepted_text(&self) -> Option<&str> {
        self.verdict.accepted.then_some(self.text.as_str())
    }
}

/// Parses `sql` against the SELECT subset and resolves every identifier in `schema`.
pub fn validate_select_only(sql: &str, schema: &SchemaDescription) -> GuardVerdict {
    let tokens = match tokenize(sql) {
        Ok(t) => t,
        Err(e @ (LexError::Comment(_) | LexError::Parameter(_))) => {
            return GuardVerdict::reject(RejectReason::ForbiddenConstruct, e.to_string())
        }
        Err(e) => return GuardVerdict::reject(RejectReason::ParseError, e.to_string()),
    };
    if tokens.is_empty() {
        return GuardVerdict::reject(RejectReason::ParseError, "empty statement");
    }
    if let Some(pos) = tokens.iter().position(|t| t.token == Token::Symbol(";")) {
        if pos + 1 != tokens.len() {
            return GuardVerdict::reject(
                RejectReason::NotSingleStatement,
                format!("statement separator at offset {}", tokens[pos].offset),
            );
        }
    }
    match &tokens[0].token {
        Token::Word(w) if w.eq_ignore_ascii_case("SELECT") => {}
        other => return GuardVerdict::reject(RejectReason::NotSelect, format!("statement starts with {other:?}")),
    }
    if let Some(t) = tokens.iter().find(|t| parser::is_forbidden_word(&t.token)) {
        return GuardVerdict::reject(RejectReason::ForbiddenConstruct, format!("{:?} at offset {}", t.token, t.offset));
    }
    let select = match Parser::new(&tokens).parse_statement() {
        Ok(s) => s,
        Err(ParseError::Forbidden(d)) => return GuardVerdict::reject(RejectReason::ForbiddenConstruct, d),
        Err(ParseError::Syntax(d)) => return GuardVerdict::reject(RejectReason::ParseError, d),
    };
    let mut resolver = Resolver { schema, tables: BTreeSet::new(), columns: BTreeSet::new() };
    match resolver.select(&select, &[]) {
        Ok(()) => GuardVerdict {
            accepted: true,
            reason: None,
            detail: String::new(),
            referenced_tables: resolver.tables,
            referenced_columns: resolver.columns,
        },
        Err(d) => GuardVerdict::reject(RejectReason::UnknownIdentifier, d),
    }
}

/// Maps binding names (table or alias) to table names for one SELECT level.
type Scope = BTreeMap<String, String>;

struct Resolver<'a> {
    schema: &'a SchemaDescription,
    tables: BTreeSet<String>,
    columns: BTreeSet<String>,
}

impl Resolver<'_> {
    fn has_column(&self, table: &str, column: &str) -> bool {
        self.schema.table(table).is_some_and(|t| t.columns.iter().any(|c| c.name.eq_ignore_ascii_case(column)))
    }

    fn select(&mut self, select: &Select, outer: &[Scope]) -> Result<(), String> {
        let mut scope = Scope::new();
        for table in std::iter::once(&select.from).chain(select.joins.iter().map(|j| &j.table)) {
            if self.schema.table(&table.name).is_none() {
                return Err(format!("unknown table {}", table.name));
            }
            if scope.insert(table.binding().to_string(), table.name.clone()).is_some() {
                return Err(format!("duplicate table binding {}", table.binding()));
            }
            self.tables.insert(table.name.clone());
        }
        let mut scopes = outer.to_vec();
        scopes.push(scope);

        let mut aliases = BTreeSet::new();
        for item in &select.items {
            match item {
                SelectItem::Wildcard => {}
                SelectItem::QualifiedWildcard(b) => {
                    if !scopes.last().expect("pushed").contains_key(b) {
                        return Err(format!("unknown table {b}"));
                    }
                }
                SelectItem::Expr { expr, alias } => {
                    self.expr(expr, &scopes, None)?;
                    if let Some(a) = alias {
                        aliases.insert(a.clone());
                    }
                }
            }
        }
        for join in &select.joins {
            self.expr(&join.on, &scopes, None)?;
        }
        if let Some(f) = &select.filter {
            self.expr(f, &scopes, None)?;
        }
        for e in &select.group_by {
            self.expr(e, &scopes, Some(&aliases))?;
        }
        if let Some(h) = &select.having {
            self.expr(h, &scopes, Some(&aliases))?;
        }
        for o in &select.order_by {
            self.expr(&o.expr, &scopes, Some(&aliases))?;
        }
        Ok(())
    }

    fn column(
        &mut self,
        table: Option<&str>,
        name: &str,
        scopes: &[Scope],
        aliases: Option<&BTreeSet<String>>,
    ) -> Result<(), String> {
        if let Some(binding) = table {
            let resolved = scopes.iter().rev().find_map(|s| s.get(binding));
            let Some(real) = resolved else {
                return Err(format!("unknown table {binding}"));
            };
            if !self.has_column(real, name) {
                return Err(format!("unknown column {binding}.{name}"));
            }
            self.columns.insert(format!("{real}.{name}"));
            return Ok(());
        }
        for scope in scopes.iter().rev() {
            let owners: BTreeSet<&String> = scope.values().filter(|t| self.has_column(t, name)).collect();
            match owners.len() {
                0 => continue,
                1 if scope.values().filter(|t| self.has_column(t, name)).count() == 1 => {
                    let real = owners.into_iter().next().expect("one owner").clone();
                    self.columns.insert(format!("{real}.{name}"));
                    return Ok(());
                }
                _ => return Err(format!("ambiguous column {name}")),
            }
        }
        if aliases.is_some_and(|a| a.contains(name)) {
            return Ok(());
        }
        Err(format!("unknown column {name}"))
    }

    fn expr(&mut self, expr: &Expr, scopes: &[Scope], aliases: Option<&BTreeSet<String>>) -> Result<(), String> {
        match expr {
            Expr::Column { table, name } => self.column(table.as_deref(), name, scopes, aliases),
            Expr::Literal(_) => Ok(()),
            Expr::Unary { expr, .. } | Expr::Not(expr) | Expr::IsNull { expr, .. } => self.expr(expr, scopes, aliases),
            Expr::Binary { left, right, .. } => {
                self.expr(left, scopes, aliases)?;
                self.expr(right, scopes, aliases)
            }
            Expr::Like { expr, pattern, .. } => {
                self.expr(expr, scopes, aliases)?;
                self.expr(pattern, scopes, aliases)
            }
            Expr::InList { expr, list, .. } => {
                self.expr(expr, scopes, aliases)?;
                list.iter().try_for_each(|e| self.expr(e, scopes, aliases))
            }
            Expr::InSubquery { expr, query, .. } => {
                self.expr(expr, scopes, aliases)?;
                self.select(query, scopes)
            }
            Expr::Between { expr, low, high, .. } => {
                self.expr(expr, scopes, aliases)?;
                self.expr(low, scopes, aliases)?;
                self.expr(high, scopes, aliases)
            }
            Expr::Function { args, .. } => args.iter().try_for_each(|e| self.expr(e, scopes, aliases)),
            Expr::Subquery(query) => self.select(query, scopes),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(sql: &str) -> GuardVerdict {
        validate_select_only(sql, &SchemaDescription::archive())
    }

    fn reason(sql: &str) -> Option<RejectReason> {
        verdict(sql).reason
    }

    #[test]
    fn accepts_documented_example() {
        let v = verdict("SELECT id FROM entries WHERE date < '1905-01-01'");
        assert!(v.accepted, "{v:?}");
        assert_eq!(v.referenced_tables, BTreeSet::from(["entries".to_string()]));
        assert_eq!(v.referenced_columns, BTreeSet::from(["entries.id".to_string(), "entries.date".to_string()]));
    }

    #[test]
    fn rejection_reasons() {
        assert_eq!(reason("DROP TABLE entries"), Some(RejectReason::NotSelect));
        assert_eq!(reason("SELECT id FROM entries; DELETE FROM entries"), Some(RejectReason::NotSingleStatement));
        assert_eq!(reason("SELECT id FROM entries -- x"), Some(RejectReason::ForbiddenConstruct));
        assert_eq!(reason("SELECT id FROM users"), Some(RejectReason::UnknownIdentifier));
        assert_eq!(reason("SELECT nope FROM entries"), Some(RejectReason::UnknownIdentifier));
        assert_eq!(reason("SELECT id FROM"), Some(RejectReason::ParseError));
        assert_eq!(
            reason("SELECT id FROM entries UNION SELECT id FROM authors"),
            Some(RejectReason::ForbiddenConstruct)
        );
        assert_eq!(reason(""), Some(RejectReason::ParseError));
    }

    #[test]
    fn join_requires_qualification_for_shared_columns() {
        assert_eq!(
            reason("SELECT id FROM entries JOIN authors ON author_id = authors.id"),
            Some(RejectReason::UnknownIdentifier)
        );
        let v = verdict("SELECT e.id FROM entries e JOIN authors a ON e.author_id = a.id WHERE a.name LIKE 'A%'");
        assert!(v.accepted, "{v:?}");
        assert!(v.referenced_columns.contains("authors.name"));
    }

    #[test]
    fn subqueries_see_outer_scope_and_only_live_in_where() {
        let v = verdict(
            "SELECT id FROM entries WHERE author_id IN (SELECT id FROM authors WHERE birth_date < '1870-01-01')",
        );
        assert!(v.accepted, "{v:?}");
        assert_eq!(
            reason("SELECT (SELECT count(*) FROM authors) FROM entries"),
            Some(RejectReason::ForbiddenConstruct)
        );
    }

    #[test]
    fn order_by_may_use_select_alias() {
        let v = verdict("SELECT author_id, count(*) AS n FROM entries GROUP BY author_id HAVING n > 1 ORDER BY n DESC");
        assert!(v.accepted, "{v:?}");
    }

    #[test]
    fn unknown_function_is_forbidden() {
        assert_eq!(reason("SELECT load_extension('x') FROM entries"), Some(RejectReason::ForbiddenConstruct));
    }

    #[test]
    fn query_only_yields_text_when_accepted() {
        let schema = SchemaDescription::archive();
        let q = SqlQuery::check("DELETE FROM entries", SqlOrigin::Llm, &schema);
        assert_eq!(q.accepted_text(), None);
        let q = SqlQuery::check("SELECT id FROM entries", SqlOrigin::Llm, &schema);
        assert_eq!(q.accepted_text(), Some("SELECT id FROM entries"));
    }

    mod properties {
        use proptest::prelude::*;

        use super::verdict;
        use crate::sql::parser::FORBIDDEN;

        proptest! {
            #[test]
            fn arbitrary_input_never_panics(sql in "\\PC{0,80}") {
                let _ = verdict(&sql);
            }

            #[test]
            fn forbidden_word_anywhere_is_rejected(
                word in proptest::sample::select(FORBIDDEN),
                cut in 0usize..=6,
                upper in any::<bool>(),
            ) {
                let tokens = ["SELECT", "id", "FROM", "entries", "WHERE", "id", "> 3"];
                let word = if upper { word.to_string() } else { word.to_ascii_lowercase() };
                let mut parts: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
                parts.insert(cut.max(1), word);
                let sql = parts.join(" ");
                prop_assert!(!verdict(&sql).accepted, "{}", sql);
            }

            #[test]
            fn second_statement_is_rejected(tail in " *[A-Za-z][A-Za-z ]{0,19}") {
                let sql = format!("SELECT id FROM entries; {tail}");
                prop_assert!(!verdict(&sql).accepted);
            }
        }
    }
}
