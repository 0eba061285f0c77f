use std::sync::LazyLock;

use regex::Regex;

use super::DataError;

pub const MAX_SQL_CHARS: usize = 10_000;

/// Keywords that modify data or engine state. Any occurrence outside a
/// string literal or quoted identifier rejects the statement.
const FORBIDDEN: &[&str] = &[
    "INSERT",
    "UPDATE",
    "DELETE",
    "DROP",
    "ALTER",
    "CREATE",
    "ATTACH",
    "DETACH",
    "PRAGMA",
    "TRUNCATE",
    "VACUUM",
    "REINDEX",
    "GRANT",
    "REVOKE",
    "MERGE",
    "UPSERT",
    "INTO",
    "LOAD_EXTENSION",
    "BEGIN",
    "COMMIT",
    "ROLLBACK",
    "SAVEPOINT",
    "RELEASE",
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Word(String),
    Quoted(String),
    Literal,
    Punct(char),
}

fn unsafe_sql(reason: impl Into<String>) -> DataError {
    DataError::UnsafeSql(reason.into())
}

fn lex(sql: &str) -> Result<Vec<Token>, DataError> {
    let chars: Vec<char> = sql.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '-' if chars.get(i + 1) == Some(&'-') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if chars.get(i + 1) == Some(&'*') => {
                let mut j = i + 2;
                while j + 1 < chars.len() && !(chars[j] == '*' && chars[j + 1] == '/') {
                    j += 1;
                }
                if j + 1 >= chars.len() {
                    return Err(unsafe_sql("unterminated comment"));
                }
                i = j + 2;
            }
            '\'' | '"' | '`' | '[' => {
                let close = if c == '[' { ']' } else { c };
                let mut j = i + 1;
                let mut text = String::new();
                loop {
                    match chars.get(j) {
                        None => return Err(unsafe_sql("unterminated quoted text")),
                        Some(&ch) if ch == close => {
                            // doubled quote is an escaped quote
                            if close != ']' && chars.get(j + 1) == Some(&close) {
                                text.push(close);
                                j += 2;
                            } else {
                                break;
                            }
                        }
                        Some(&ch) => {
                            text.push(ch);
                            j += 1;
                        }
                    }
                }
                tokens.push(if c == '\'' { Token::Literal } else { Token::Quoted(text) });
                i = j + 1;
            }
            c if c.is_alphanumeric() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                    i += 1;
                }
                tokens.push(Token::Word(chars[start..i].iter().collect()));
            }
            c => {
                tokens.push(Token::Punct(c));
                i += 1;
            }
        }
    }
    Ok(tokens)
}

/// Accepts exactly one read-only statement starting with SELECT or WITH.
pub fn validate_sql(sql: &str) -> Result<(), DataError> {
    if sql.chars().count() > MAX_SQL_CHARS {
        return Err(unsafe_sql(format!("statement longer than {MAX_SQL_CHARS} characters")));
    }
    let tokens = lex(sql)?;
    let statements = tokens.split(|t| *t == Token::Punct(';')).filter(|s| !s.is_empty()).count();
    match statements {
        0 => return Err(unsafe_sql("empty statement")),
        1 => {}
        _ => return Err(unsafe_sql("multiple statements")),
    }
    let first = tokens.iter().find_map(|t| match t {
        Token::Word(w) => Some(w.to_ascii_uppercase()),
        _ => None,
    });
    if !matches!(first.as_deref(), Some("SELECT" | "WITH")) || !matches!(tokens.first(), Some(Token::Word(_))) {
        return Err(unsafe_sql("statement must start with SELECT or WITH"));
    }
    for t in &tokens {
        if let Token::Word(w) = t {
            let upper = w.to_ascii_uppercase();
            if FORBIDDEN.contains(&upper.as_str()) {
                return Err(unsafe_sql(format!("forbidden keyword {upper}")));
            }
        }
    }
    Ok(())
}

static FENCED_SQL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)```[ \t]*sql[ \t]*\r?\n(.*?)```").unwrap());
static BARE_SELECT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?ism)^[ \t]*(select\b.*?)(?:;|\n[ \t]*\r?\n|\z)").unwrap());

/// Pulls SQL out of a model reply: the first ```sql fenced block, else the
/// first line-leading SELECT up to `;`, a blank line, or the end.
pub fn extract_sql(response: &str) -> Option<String> {
    let raw =
        FENCED_SQL.captures(response).or_else(|| BARE_SELECT.captures(response)).map(|c| c[1].trim().to_string())?;
    let sql = raw.trim_end_matches(';').trim_end().to_string();
    (!sql.is_empty()).then_some(sql)
}

/// Table names following FROM or JOIN, in first-appearance order.
pub fn referenced_tables(sql: &str) -> Vec<String> {
    let Ok(tokens) = lex(sql) else { return Vec::new() };
    let name_at = |i: usize| match tokens.get(i) {
        Some(Token::Word(w)) => Some(w.clone()),
        Some(Token::Quoted(q)) => Some(q.clone()),
        _ => None,
    };
    let is_word = |i: usize, kw: &str| matches!(tokens.get(i), Some(Token::Word(w)) if w.eq_ignore_ascii_case(kw));
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if is_word(i, "FROM") || is_word(i, "JOIN") {
            let mut j = i + 1;
            while let Some(mut name) = name_at(j) {
                j += 1;
                // schema-qualified name keeps the last part
                while tokens.get(j) == Some(&Token::Punct('.')) {
                    if let Some(part) = name_at(j + 1) {
                        name = part;
                    }
                    j += 2;
                }
                if !out.iter().any(|t| t.eq_ignore_ascii_case(&name)) {
                    out.push(name);
                }
                if is_word(j, "AS") {
                    j += 2;
                } else if matches!(tokens.get(j), Some(Token::Word(w)) if !is_clause_word(w)) {
                    j += 1;
                }
                if tokens.get(j) == Some(&Token::Punct(',')) && is_word(i, "FROM") {
                    j += 1;
                    continue;
                }
                break;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

fn is_clause_word(w: &str) -> bool {
    const WORDS: &[&str] = &[
        "WHERE",
        "GROUP",
        "ORDER",
        "LIMIT",
        "JOIN",
        "INNER",
        "LEFT",
        "RIGHT",
        "FULL",
        "CROSS",
        "OUTER",
        "ON",
        "USING",
        "HAVING",
        "UNION",
        "EXCEPT",
        "INTERSECT",
        "NATURAL",
        "WINDOW",
        "OFFSET",
    ];
    WORDS.iter().any(|k| k.eq_ignore_ascii_case(w))
}
