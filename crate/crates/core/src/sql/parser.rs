//! Recursive-descent parser for the SELECT subset in `docs/sql-subset.ebnf`.

use super::lexer::{Spanned, Token};

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub distinct: bool,
    pub items: Vec<SelectItem>,
    pub from: TableRef,
    pub joins: Vec<Join>,
    pub filter: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub having: Option<Expr>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<u64>,
    pub offset: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Wildcard,
    QualifiedWildcard(String),
    Expr { expr: Expr, alias: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRef {
    pub name: String,
    pub alias: Option<String>,
}

impl TableRef {
    /// Name other clauses use to refer to this table.
    pub fn binding(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinKind {
    Inner,
    Left,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Join {
    pub kind: JoinKind,
    pub table: TableRef,
    pub on: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderItem {
    pub expr: Expr,
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(String),
    Str(String),
    Null,
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column { table: Option<String>, name: String },
    Literal(Literal),
    Unary { op: &'static str, expr: Box<Expr> },
    Binary { op: String, left: Box<Expr>, right: Box<Expr> },
    Not(Box<Expr>),
    Like { expr: Box<Expr>, pattern: Box<Expr>, negated: bool },
    InList { expr: Box<Expr>, list: Vec<Expr>, negated: bool },
    InSubquery { expr: Box<Expr>, query: Box<Select>, negated: bool },
    Between { expr: Box<Expr>, low: Box<Expr>, high: Box<Expr>, negated: bool },
    IsNull { expr: Box<Expr>, negated: bool },
    Function { name: String, distinct: bool, args: Vec<Expr>, star: bool },
    Subquery(Box<Select>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseError {
    /// Syntax outside the subset that is never allowed (writes, set operations, ...).
    Forbidden(String),
    Syntax(String),
}

/// Words that can never be used as bare identifiers.
const RESERVED: &[&str] = &[
    "SELECT", "DISTINCT", "ALL", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "ASC", "DESC", "LIMIT", "OFFSET",
    "JOIN", "INNER", "LEFT", "OUTER", "ON", "AS", "AND", "OR", "NOT", "LIKE", "IN", "BETWEEN", "IS", "NULL", "TRUE",
    "FALSE", "CASE", "WHEN", "THEN", "ELSE", "END", "EXISTS", "CAST", "COLLATE", "GLOB", "REGEXP", "MATCH", "ESCAPE",
];

/// Words whose appearance anywhere marks the statement as outside the read-only subset.
pub const FORBIDDEN: &[&str] = &[
    "INSERT",
    "UPDATE",
    "DELETE",
    "DROP",
    "CREATE",
    "ALTER",
    "ATTACH",
    "DETACH",
    "PRAGMA",
    "UNION",
    "INTERSECT",
    "EXCEPT",
    "WITH",
    "INTO",
    "REPLACE",
    "VACUUM",
    "REINDEX",
    "ANALYZE",
    "TRUNCATE",
    "GRANT",
    "REVOKE",
    "BEGIN",
    "COMMIT",
    "ROLLBACK",
    "SAVEPOINT",
    "RELEASE",
    "EXPLAIN",
    "CROSS",
    "NATURAL",
    "RIGHT",
    "FULL",
    "UPSERT",
    "VALUES",
    "SET",
    "TABLE",
    "INDEX",
    "TRIGGER",
    "VIEW",
    "RECURSIVE",
    "WINDOW",
    "OVER",
    "RETURNING",
    "CONFLICT",
    "DEFAULT",
];

/// Scalar and aggregate functions callable inside queries.
pub const FUNCTIONS: &[&str] = &[
    "COUNT",
    "SUM",
    "AVG",
    "MIN",
    "MAX",
    "TOTAL",
    "LOWER",
    "UPPER",
    "LENGTH",
    "SUBSTR",
    "SUBSTRING",
    "TRIM",
    "LTRIM",
    "RTRIM",
    "INSTR",
    "ABS",
    "ROUND",
    "COALESCE",
    "IFNULL",
    "NULLIF",
    "DATE",
    "STRFTIME",
    "JULIANDAY",
];

fn is_word(tok: &Token, kw: &str) -> bool {
    matches!(tok, Token::Word(w) if w.eq_ignore_ascii_case(kw))
}

pub fn is_forbidden_word(tok: &Token) -> bool {
    matches!(tok, Token::Word(w) if FORBIDDEN.iter().any(|f| w.eq_ignore_ascii_case(f)))
}

fn is_reserved(w: &str) -> bool {
    RESERVED.iter().any(|r| w.eq_ignore_ascii_case(r)) || FORBIDDEN.iter().any(|r| w.eq_ignore_ascii_case(r))
}

pub struct Parser<'a> {
    tokens: &'a [Spanned],
    pos: usize,
    /// Subqueries are only admitted inside WHERE clauses.
    in_where: bool,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    pub fn new(tokens: &'a [Spanned]) -> Self {
        Parser { tokens, pos: 0, in_where: false }
    }

    /// Parses one SELECT, an optional trailing `;`, and requires end of input.
    pub fn parse_statement(mut self) -> PResult<Select> {
        let select = self.select()?;
        self.eat_symbol(";");
        if let Some(tok) = self.peek() {
            return Err(self.unexpected(tok));
        }
        Ok(select)
    }

    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos).map(|s| &s.token)
    }

    fn peek_at(&self, n: usize) -> Option<&'a Token> {
        self.tokens.get(self.pos + n).map(|s| &s.token)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or_else(|| self.tokens.last().map_or(0, |s| s.offset + 1), |s| s.offset)
    }

    fn unexpected(&self, tok: &Token) -> ParseError {
        if is_forbidden_word(tok) {
            ParseError::Forbidden(format!("{tok:?} at offset {}", self.offset()))
        } else {
            ParseError::Syntax(format!("unexpected {tok:?} at offset {}", self.offset()))
        }
    }

    fn eof(&self, wanted: &str) -> ParseError {
        ParseError::Syntax(format!("expected {wanted}, found end of input"))
    }

    fn at_word(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| is_word(t, kw))
    }

    fn eat_word(&mut self, kw: &str) -> bool {
        if self.at_word(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, kw: &str) -> PResult<()> {
        match self.peek() {
            Some(t) if is_word(t, kw) => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.unexpected(t)),
            None => Err(self.eof(kw)),
        }
    }

    fn at_symbol(&self, sym: &str) -> bool {
        matches!(self.peek(), Some(Token::Symbol(s)) if *s == sym)
    }

    fn eat_symbol(&mut self, sym: &str) -> bool {
        if self.at_symbol(sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_symbol(&mut self, sym: &str) -> PResult<()> {
        if self.eat_symbol(sym) {
            return Ok(());
        }
        match self.peek() {
            Some(t) => Err(self.unexpected(t)),
            None => Err(self.eof(sym)),
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek() {
            Some(Token::Word(w)) if !is_reserved(w) => {
                self.pos += 1;
                Ok(w.to_ascii_lowercase())
            }
            Some(Token::Quoted(q)) => {
                self.pos += 1;
                Ok(q.to_ascii_lowercase())
            }
            Some(t) => Err(self.unexpected(t)),
            None => Err(self.eof("identifier")),
        }
    }

    fn at_ident(&self) -> bool {
        match self.peek() {
            Some(Token::Word(w)) => !is_reserved(w),
            Some(Token::Quoted(_)) => true,
            _ => false,
        }
    }

    fn select(&mut self) -> PResult<Select> {
        self.expect_word("SELECT")?;
        let distinct = self.eat_word("DISTINCT");
        if !distinct {
            self.eat_word("ALL");
        }
        let mut items = vec![self.select_item()?];
        while self.eat_symbol(",") {
            items.push(self.select_item()?);
        }
        self.expect_word("FROM")?;
        let from = self.table_ref()?;
        let mut joins = Vec::new();
        loop {
            let kind = if self.eat_word("INNER") {
                JoinKind::Inner
            } else if self.eat_word("LEFT") {
                self.eat_word("OUTER");
                JoinKind::Left
            } else if self.at_word("JOIN") {
                JoinKind::Inner
            } else {
                break;
            };
            self.expect_word("JOIN")?;
            let table = self.table_ref()?;
            self.expect_word("ON")?;
            let on = self.expr()?;
            joins.push(Join { kind, table, on });
        }
        let filter = if self.eat_word("WHERE") {
            let outer = std::mem::replace(&mut self.in_where, true);
            let e = self.expr();
            self.in_where = outer;
            Some(e?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_word("GROUP") {
            self.expect_word("BY")?;
            group_by.push(self.expr()?);
            while self.eat_symbol(",") {
                group_by.push(self.expr()?);
            }
        }
        let having = if self.eat_word("HAVING") { Some(self.expr()?) } else { None };
        let mut order_by = Vec::new();
        if self.eat_word("ORDER") {
            self.expect_word("BY")?;
            loop {
                let expr = self.expr()?;
                let descending = if self.eat_word("DESC") {
                    true
                } else {
                    self.eat_word("ASC");
                    false
                };
                order_by.push(OrderItem { expr, descending });
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        let mut limit = None;
        let mut offset = None;
        if self.eat_word("LIMIT") {
            limit = Some(self.unsigned()?);
            if self.eat_word("OFFSET") {
                offset = Some(self.unsigned()?);
            }
        }
        Ok(Select { distinct, items, from, joins, filter, group_by, having, order_by, limit, offset })
    }

    fn unsigned(&mut self) -> PResult<u64> {
        match self.peek() {
            Some(Token::Number(n)) => {
                let v = n
                    .parse::<u64>()
                    .map_err(|_| ParseError::Syntax(format!("expected a non-negative integer, found {n}")))?;
                self.pos += 1;
                Ok(v)
            }
            Some(t) => Err(self.unexpected(t)),
            None => Err(self.eof("integer")),
        }
    }

    fn select_item(&mut self) -> PResult<SelectItem> {
        if self.eat_symbol("*") {
            return Ok(SelectItem::Wildcard);
        }
        if self.at_ident()
            && matches!(self.peek_at(1), Some(Token::Symbol(".")))
            && matches!(self.peek_at(2), Some(Token::Symbol("*")))
        {
            let table = self.ident()?;
            self.pos += 2;
            return Ok(SelectItem::QualifiedWildcard(table));
        }
        let expr = self.expr()?;
        let alias = if self.eat_word("AS") || self.at_ident() { Some(self.ident()?) } else { None };
        Ok(SelectItem::Expr { expr, alias })
    }

    fn table_ref(&mut self) -> PResult<TableRef> {
        let name = self.ident()?;
        if self.at_symbol("(") {
            // table-valued functions such as pragma_table_info(...)
            return Err(ParseError::Forbidden(format!("table-valued function {name}")));
        }
        let alias = if self.eat_word("AS") || self.at_ident() { Some(self.ident()?) } else { None };
        Ok(TableRef { name, alias })
    }

    pub fn expr(&mut self) -> PResult<Expr> {
        let mut left = self.and_expr()?;
        while self.eat_word("OR") {
            let right = self.and_expr()?;
            left = Expr::Binary { op: "OR".into(), left: Box::new(left), right: Box::new(right) };
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut left = self.not_expr()?;
        while self.eat_word("AND") {
            let right = self.not_expr()?;
            left = Expr::Binary { op: "AND".into(), left: Box::new(left), right: Box::new(right) };
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.eat_word("NOT") {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.predicate()
    }

    fn predicate(&mut self) -> PResult<Expr> {
        let left = self.additive()?;
        if let Some(Token::Symbol(op)) = self.peek() {
            if matches!(*op, "=" | "==" | "!=" | "<>" | "<" | "<=" | ">" | ">=") {
                self.pos += 1;
                let right = self.additive()?;
                return Ok(Expr::Binary { op: op.to_string(), left: Box::new(left), right: Box::new(right) });
            }
        }
        if self.eat_word("IS") {
            let negated = self.eat_word("NOT");
            self.expect_word("NULL")?;
            return Ok(Expr::IsNull { expr: Box::new(left), negated });
        }
        let negated = self.at_word("NOT")
            && self.peek_at(1).is_some_and(|t| is_word(t, "LIKE") || is_word(t, "IN") || is_word(t, "BETWEEN"));
        if negated {
            self.pos += 1;
        }
        if self.eat_word("LIKE") {
            let pattern = self.additive()?;
            return Ok(Expr::Like { expr: Box::new(left), pattern: Box::new(pattern), negated });
        }
        if self.eat_word("BETWEEN") {
            let low = self.additive()?;
            self.expect_word("AND")?;
            let high = self.additive()?;
            return Ok(Expr::Between { expr: Box::new(left), low: Box::new(low), high: Box::new(high), negated });
        }
        if self.eat_word("IN") {
            self.expect_symbol("(")?;
            if self.at_word("SELECT") {
                let query = self.subquery()?;
                self.expect_symbol(")")?;
                return Ok(Expr::InSubquery { expr: Box::new(left), query: Box::new(query), negated });
            }
            let mut list = vec![self.expr()?];
            while self.eat_symbol(",") {
                list.push(self.expr()?);
            }
            self.expect_symbol(")")?;
            return Ok(Expr::InList { expr: Box::new(left), list, negated });
        }
        if negated {
            unreachable!("NOT consumed only before LIKE/IN/BETWEEN");
        }
        Ok(left)
    }

    fn subquery(&mut self) -> PResult<Select> {
        if !self.in_where {
            return Err(ParseError::Forbidden("subquery outside WHERE".into()));
        }
        self.select()
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut left = self.multiplicative()?;
        while let Some(Token::Symbol(op @ ("+" | "-" | "||"))) = self.peek() {
            self.pos += 1;
            let right = self.multiplicative()?;
            left = Expr::Binary { op: op.to_string(), left: Box::new(left), right: Box::new(right) };
        }
        Ok(left)
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut left = self.unary()?;
        while let Some(Token::Symbol(op @ ("*" | "/" | "%"))) = self.peek() {
            self.pos += 1;
            let right = self.unary()?;
            left = Expr::Binary { op: op.to_string(), left: Box::new(left), right: Box::new(right) };
        }
        Ok(left)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if let Some(Token::Symbol(op @ ("-" | "+"))) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Unary { op, expr: Box::new(self.unary()?) });
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let Some(tok) = self.peek() else {
            return Err(self.eof("expression"));
        };
        match tok {
            Token::Number(n) => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Number(n.clone())))
            }
            Token::Str(s) => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Str(s.clone())))
            }
            Token::Symbol("(") => {
                self.pos += 1;
                let e = if self.at_word("SELECT") { Expr::Subquery(Box::new(self.subquery()?)) } else { self.expr()? };
                self.expect_symbol(")")?;
                Ok(e)
            }
            Token::Word(w) if w.eq_ignore_ascii_case("NULL") => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Null))
            }
            Token::Word(w) if w.eq_ignore_ascii_case("TRUE") || w.eq_ignore_ascii_case("FALSE") => {
                self.pos += 1;
                Ok(Expr::Literal(Literal::Bool(w.eq_ignore_ascii_case("TRUE"))))
            }
            Token::Word(w) if matches!(self.peek_at(1), Some(Token::Symbol("("))) => {
                let upper = w.to_ascii_uppercase();
                if !FUNCTIONS.contains(&upper.as_str()) {
                    return Err(if is_reserved(w) && !is_forbidden_word(tok) {
                        self.unexpected(tok)
                    } else {
                        ParseError::Forbidden(format!("function {w} is not allowed"))
                    });
                }
                self.pos += 2;
                if self.eat_symbol("*") {
                    if upper != "COUNT" {
                        return Err(ParseError::Syntax(format!("{upper}(*) is not valid")));
                    }
                    self.expect_symbol(")")?;
                    return Ok(Expr::Function { name: upper, distinct: false, args: vec![], star: true });
                }
                let distinct = self.eat_word("DISTINCT");
                let mut args = Vec::new();
                if !self.at_symbol(")") {
                    args.push(self.expr()?);
                    while self.eat_symbol(",") {
                        args.push(self.expr()?);
                    }
                }
                self.expect_symbol(")")?;
                Ok(Expr::Function { name: upper, distinct, args, star: false })
            }
            _ if self.at_ident() => {
                let first = self.ident()?;
                if self.eat_symbol(".") {
                    let name = self.ident()?;
                    Ok(Expr::Column { table: Some(first), name })
                } else {
                    Ok(Expr::Column { table: None, name: first })
                }
            }
            other => Err(self.unexpected(other)),
        }
    }
}
