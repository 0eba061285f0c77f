use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use super::{AwelError, ConfigValue, DagSpec, Edge, NodeKind, OperatorSpec};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Arrow,
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Colon,
    Comma,
    Eq,
    Eof,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, expected: impl Into<String>) -> AwelError {
    AwelError::Syntax { line, col, expected: expected.into() }
}

fn lex(source: &str) -> Result<Vec<Spanned>, AwelError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let bump = |i: &mut usize, line: &mut usize, col: &mut usize| {
        if chars[*i] == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
        *i += 1;
    };
    while i < chars.len() {
        let c = chars[i];
        let (l, cl) = (line, col);
        if c.is_whitespace() {
            bump(&mut i, &mut line, &mut col);
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                bump(&mut i, &mut line, &mut col);
            }
            continue;
        }
        let single = match c {
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            ':' => Some(Tok::Colon),
            ',' => Some(Tok::Comma),
            '=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(tok) = single {
            bump(&mut i, &mut line, &mut col);
            out.push(Spanned { tok, line: l, col: cl });
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'>') {
            bump(&mut i, &mut line, &mut col);
            bump(&mut i, &mut line, &mut col);
            out.push(Spanned { tok: Tok::Arrow, line: l, col: cl });
            continue;
        }
        if c == '"' {
            bump(&mut i, &mut line, &mut col);
            let mut s = String::new();
            loop {
                let Some(&ch) = chars.get(i) else {
                    return Err(syntax(line, col, "closing `\"`"));
                };
                match ch {
                    '"' => {
                        bump(&mut i, &mut line, &mut col);
                        break;
                    }
                    '\\' => {
                        let (el, ec) = (line, col);
                        bump(&mut i, &mut line, &mut col);
                        match chars.get(i) {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            _ => return Err(syntax(el, ec, "escape `\\\"`, `\\\\` or `\\n`")),
                        }
                        bump(&mut i, &mut line, &mut col);
                    }
                    _ => {
                        s.push(ch);
                        bump(&mut i, &mut line, &mut col);
                    }
                }
            }
            out.push(Spanned { tok: Tok::Str(s), line: l, col: cl });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                bump(&mut i, &mut line, &mut col);
            }
            out.push(Spanned { tok: Tok::Ident(chars[start..i].iter().collect()), line: l, col: cl });
            continue;
        }
        if c.is_ascii_digit() || c == '-' || c == '+' {
            let start = i;
            bump(&mut i, &mut line, &mut col);
            while i < chars.len() {
                let ch = chars[i];
                let exp_sign = (ch == '-' || ch == '+') && matches!(chars[i - 1], 'e' | 'E');
                if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || exp_sign {
                    bump(&mut i, &mut line, &mut col);
                } else {
                    break;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let n: f64 = text.parse().map_err(|_| syntax(l, cl, "number"))?;
            if !n.is_finite() {
                return Err(syntax(l, cl, "finite number"));
            }
            out.push(Spanned { tok: Tok::Num(n), line: l, col: cl });
            continue;
        }
        return Err(syntax(l, cl, "token"));
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

fn is_node_id(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn peek_at(&self, ahead: usize) -> &Tok {
        &self.toks[(self.pos + ahead).min(self.toks.len() - 1)].tok
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &str) -> Result<T, AwelError> {
        let t = self.peek();
        Err(syntax(t.line, t.col, expected))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), AwelError> {
        if self.peek().tok == tok {
            self.next();
            Ok(())
        } else {
            self.fail(what)
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), AwelError> {
        match &self.peek().tok {
            Tok::Ident(s) if s == kw => {
                self.next();
                Ok(())
            }
            _ => self.fail(&format!("`{kw}`")),
        }
    }

    fn string(&mut self) -> Result<String, AwelError> {
        match self.peek().tok.clone() {
            Tok::Str(s) => {
                self.next();
                Ok(s)
            }
            _ => self.fail("string"),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, AwelError> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            _ => self.fail(what),
        }
    }

    fn node_id(&mut self) -> Result<String, AwelError> {
        match self.peek().tok.clone() {
            Tok::Ident(s) if is_node_id(&s) => {
                self.next();
                Ok(s)
            }
            _ => self.fail("node id"),
        }
    }

    fn node(&mut self) -> Result<OperatorSpec, AwelError> {
        self.keyword("node")?;
        let id = self.node_id()?;
        self.expect(Tok::Colon, "`:`")?;
        let kind = match &self.peek().tok {
            Tok::Ident(s) => NodeKind::parse(s),
            _ => None,
        };
        let Some(kind) = kind else { return self.fail("operator kind") };
        self.next();
        self.expect(Tok::LParen, "`(`")?;
        let mut config = BTreeMap::new();
        if self.peek().tok != Tok::RParen {
            loop {
                let at = self.peek().clone();
                let key = self.ident("config key")?;
                self.expect(Tok::Eq, "`=`")?;
                let value = match self.peek().tok.clone() {
                    Tok::Str(s) => ConfigValue::Str(s),
                    Tok::Num(n) => ConfigValue::Num(n),
                    Tok::Ident(s) if s == "true" => ConfigValue::Bool(true),
                    Tok::Ident(s) if s == "false" => ConfigValue::Bool(false),
                    _ => return self.fail("string, number, `true` or `false`"),
                };
                self.next();
                if config.insert(key, value).is_some() {
                    return Err(syntax(at.line, at.col, "distinct config key"));
                }
                if self.peek().tok == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        Ok(OperatorSpec { id, kind, config })
    }

    fn edge(&mut self) -> Result<Edge, AwelError> {
        let from = self.node_id()?;
        self.expect(Tok::Arrow, "`->`")?;
        let to = self.node_id()?;
        let mut when = None;
        if self.peek().tok == Tok::LBracket {
            self.next();
            self.keyword("when")?;
            self.expect(Tok::Eq, "`=`")?;
            when = Some(self.string()?);
            self.expect(Tok::RBracket, "`]`")?;
        }
        Ok(Edge { from, to, when })
    }

    fn dag(&mut self) -> Result<DagSpec, AwelError> {
        self.keyword("dag")?;
        let name = self.string()?;
        self.expect(Tok::LBrace, "`{`")?;
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        // `node` followed by `->` is an edge from a node named "node".
        while matches!(&self.peek().tok, Tok::Ident(s) if s == "node") && *self.peek_at(1) != Tok::Arrow {
            nodes.push(self.node()?);
        }
        while matches!(self.peek().tok, Tok::Ident(_)) {
            edges.push(self.edge()?);
        }
        let expected = if edges.is_empty() { "`node`, an edge or `}`" } else { "an edge or `}`" };
        self.expect(Tok::RBrace, expected)?;
        if self.peek().tok != Tok::Eof {
            return self.fail("end of input");
        }
        Ok(DagSpec { name, nodes, edges })
    }
}

/// Parses DAG source text. Checks syntax, duplicate node ids and edge
/// endpoints; everything else is left to [`super::validate`].
pub fn parse_dag_dsl(source: &str) -> Result<DagSpec, AwelError> {
    let mut parser = Parser { toks: lex(source)?, pos: 0 };
    let dag = parser.dag()?;
    let mut ids = HashSet::new();
    for n in &dag.nodes {
        if !ids.insert(n.id.as_str()) {
            return Err(AwelError::DuplicateNodeId(n.id.clone()));
        }
    }
    for e in &dag.edges {
        for end in [&e.from, &e.to] {
            if !ids.contains(end.as_str()) {
                return Err(AwelError::UnknownNode(end.clone()));
            }
        }
    }
    Ok(dag)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

/// Canonical source text; `parse_dag_dsl` gives back an equal DAG.
pub fn print_dag(dag: &DagSpec) -> String {
    let mut out = format!("dag {} {{\n", quote(&dag.name));
    for n in &dag.nodes {
        let args: Vec<String> = n
            .config
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    ConfigValue::Str(s) => quote(s),
                    ConfigValue::Num(x) => number(*x),
                    ConfigValue::Bool(b) => b.to_string(),
                };
                format!("{k}={v}")
            })
            .collect();
        let _ = writeln!(out, "  node {}: {}({})", n.id, n.kind.as_str(), args.join(", "));
    }
    for e in &dag.edges {
        match &e.when {
            Some(w) => {
                let _ = writeln!(out, "  {} -> {} [when={}]", e.from, e.to, quote(w));
            }
            None => {
                let _ = writeln!(out, "  {} -> {}", e.from, e.to);
            }
        }
    }
    out.push_str("}\n");
    out
}
