//! Tokenizer for the SELECT subset.

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    /// Bare word; keywords are recognized case-insensitively by the parser.
    Word(String),
    /// `"..."` or `` `...` `` quoted identifier.
    Quoted(String),
    Number(String),
    Str(String),
    Symbol(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spanned {
    pub token: Token,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LexError {
    /// `--` or `/*` comments are outside the grammar.
    Comment(usize),
    /// Bind parameters (`?`, `:name`, `@name`, `$name`).
    Parameter(usize),
    Unterminated(usize),
    Unexpected(char, usize),
}

impl std::fmt::Display for LexError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LexError::Comment(at) => write!(f, "comment at offset {at}"),
            LexError::Parameter(at) => write!(f, "bind parameter at offset {at}"),
            LexError::Unterminated(at) => write!(f, "unterminated literal starting at offset {at}"),
            LexError::Unexpected(c, at) => write!(f, "unexpected character {c:?} at offset {at}"),
        }
    }
}

const SYMBOLS: &[&str] =
    &["<=", ">=", "<>", "!=", "==", "||", "(", ")", ",", ".", ";", "*", "+", "-", "/", "%", "=", "<", ">"];

pub fn tokenize(sql: &str) -> Result<Vec<Spanned>, LexError> {
    let bytes = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < sql.len() {
        let c = sql[i..].chars().next().expect("in bounds");
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        let start = i;
        if sql[i..].starts_with("--") || sql[i..].starts_with("/*") || c == '#' {
            return Err(LexError::Comment(start));
        }
        if matches!(c, '?' | ':' | '@' | '$') {
            return Err(LexError::Parameter(start));
        }
        if c == '\'' {
            let mut value = String::new();
            i += 1;
            loop {
                let Some(ch) = sql[i..].chars().next() else {
                    return Err(LexError::Unterminated(start));
                };
                i += ch.len_utf8();
                if ch == '\'' {
                    if bytes.get(i) == Some(&b'\'') {
                        value.push('\'');
                        i += 1;
                    } else {
                        break;
                    }
                } else {
                    value.push(ch);
                }
            }
            out.push(Spanned { token: Token::Str(value), offset: start });
            continue;
        }
        if c == '"' || c == '`' {
            let close = sql[i + 1..].find(c).ok_or(LexError::Unterminated(start))?;
            let name = sql[i + 1..i + 1 + close].to_string();
            i += close + 2;
            out.push(Spanned { token: Token::Quoted(name), offset: start });
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i;
            while j < sql.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                j += 1;
            }
            out.push(Spanned { token: Token::Number(sql[i..j].to_string()), offset: start });
            i = j;
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let mut j = i;
            while let Some(ch) = sql[j..].chars().next() {
                if ch.is_alphanumeric() || ch == '_' {
                    j += ch.len_utf8();
                } else {
                    break;
                }
            }
            out.push(Spanned { token: Token::Word(sql[i..j].to_string()), offset: start });
            i = j;
            continue;
        }
        if let Some(sym) = SYMBOLS.iter().find(|s| sql[i..].starts_with(**s)) {
            out.push(Spanned { token: Token::Symbol(sym), offset: start });
            i += sym.len();
            continue;
        }
        return Err(LexError::Unexpected(c, start));
    }
    Ok(out)
}
