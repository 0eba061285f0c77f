use std::sync::LazyLock;

use regex::Regex;

use super::{KnowledgeBase, RagError, RetrievalHit};
use crate::num::Scalar;

/// Default knowledge-QA template, versioned under `prompts/`.
pub const DEFAULT_TEMPLATE: &str = include_str!("../../prompts/rag_answer.txt");

pub const DEFAULT_TOKEN_BUDGET: usize = 2048;

const CONTEXT_SEPARATOR: &str = "\n---\n";

/// Fills `{context}` and `{question}` in `template`.
///
/// Contexts go in rank order. When the filled prompt has more than
/// `token_budget` whitespace-delimited words, the lowest-ranked contexts are
/// dropped until it fits; the question itself is never cut.
pub fn build_prompt<F: Scalar>(
    question: &str,
    hits: &[RetrievalHit<F>],
    kb: &KnowledgeBase<F>,
    template: &str,
    token_budget: usize,
) -> Result<String, RagError> {
    let parts = TemplateParts::parse(template)?;
    let mut ranked: Vec<&RetrievalHit<F>> = hits.iter().collect();
    ranked.sort_by_key(|h| h.rank);
    let contexts: Vec<&str> = ranked.iter().filter_map(|h| kb.get(&h.chunk_id)).map(|c| c.text.as_str()).collect();
    let mut keep = contexts.len();
    loop {
        let prompt = parts.fill(&contexts[..keep].join(CONTEXT_SEPARATOR), question);
        if keep == 0 || prompt.split_whitespace().count() <= token_budget {
            return Ok(prompt);
        }
        keep -= 1;
    }
}

enum Piece<'a> {
    Text(&'a str),
    Context,
    Question,
}

struct TemplateParts<'a>(Vec<Piece<'a>>);

impl<'a> TemplateParts<'a> {
    fn parse(template: &'a str) -> Result<Self, RagError> {
        if !template.contains("{context}") {
            return Err(RagError::BadTemplate("{context}"));
        }
        if !template.contains("{question}") {
            return Err(RagError::BadTemplate("{question}"));
        }
        let mut pieces = Vec::new();
        let mut rest = template;
        loop {
            let next = [("{context}", 0), ("{question}", 1)]
                .into_iter()
                .filter_map(|(p, kind)| rest.find(p).map(|at| (at, p.len(), kind)))
                .min();
            match next {
                Some((at, len, kind)) => {
                    pieces.push(Piece::Text(&rest[..at]));
                    pieces.push(if kind == 0 { Piece::Context } else { Piece::Question });
                    rest = &rest[at + len..];
                }
                None => {
                    pieces.push(Piece::Text(rest));
                    break;
                }
            }
        }
        Ok(Self(pieces))
    }

    fn fill(&self, context: &str, question: &str) -> String {
        let mut out = String::new();
        for piece in &self.0 {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Context => out.push_str(context),
                Piece::Question => out.push_str(question),
            }
        }
        out
    }
}

static EMAIL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}").unwrap());
static PHONE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[+(]*\d[\d \-+()]*\d\)?").unwrap());

/// Masks email addresses and phone-like digit runs (at least 7 digits, with
/// optional `+ - ( )` and space separators).
pub fn redact(text: &str) -> String {
    let masked = EMAIL.replace_all(text, "[REDACTED:email]");
    PHONE
        .replace_all(&masked, |caps: &regex::Captures<'_>| {
            let m = &caps[0];
            if m.chars().filter(char::is_ascii_digit).count() >= 7 {
                "[REDACTED:phone]".to_string()
            } else {
                m.to_string()
            }
        })
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rag::{HitSource, DEFAULT_DIM};

    fn kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new(DEFAULT_DIM);
        kb.ingest("a", "alpha text", 512).unwrap();
        kb.ingest("b", "beta words here", 512).unwrap();
        kb
    }

    fn hit(id: &str, rank: usize) -> RetrievalHit {
        RetrievalHit { chunk_id: id.into(), score: 1.0, source: HitSource::Vector, rank }
    }

    #[test]
    fn fills_single_context() {
        let out = build_prompt("why?", &[hit("a#0000", 1)], &kb(), "C: {context} Q: {question}", 100).unwrap();
        assert_eq!(out, "C: alpha text Q: why?");
    }

    #[test]
    fn contexts_in_rank_order_with_separator() {
        let hits = [hit("a#0000", 2), hit("b#0000", 1)];
        let out = build_prompt("q", &hits, &kb(), "{context}|{question}", 100).unwrap();
        assert_eq!(out, "beta words here\n---\nalpha text|q");
    }

    #[test]
    fn question_is_kept_when_nothing_fits() {
        let out = build_prompt("a long question here", &[hit("a#0000", 1)], &kb(), "{context}{question}", 1).unwrap();
        assert_eq!(out, "a long question here");
    }

    #[test]
    fn missing_placeholders() {
        assert_eq!(build_prompt::<f64>("q", &[], &kb(), "{context}", 10), Err(RagError::BadTemplate("{question}")));
        assert_eq!(build_prompt::<f64>("q", &[], &kb(), "{question}", 10), Err(RagError::BadTemplate("{context}")));
    }

    #[test]
    fn question_containing_placeholder_is_not_expanded() {
        let out = build_prompt("{context}?", &[hit("a#0000", 1)], &kb(), "{question} / {context}", 100).unwrap();
        assert_eq!(out, "{context}? / alpha text");
    }

    #[test]
    fn default_template_has_placeholders() {
        assert!(DEFAULT_TEMPLATE.contains("{context}") && DEFAULT_TEMPLATE.contains("{question}"));
    }

    #[test]
    fn redacts_emails_and_phones() {
        assert_eq!(redact("mail a@b.co"), "mail [REDACTED:email]");
        assert_eq!(redact("call +1 (555) 123-4567 now"), "call [REDACTED:phone] now");
        assert_eq!(redact("call 5551234."), "call [REDACTED:phone].");
        assert_eq!(redact("sold 42 units in 2024"), "sold 42 units in 2024");
        assert_eq!(redact("no matches here"), "no matches here");
    }

    #[test]
    fn redaction_is_idempotent() {
        for t in ["a@b.co and 555-123-4567", "x.y+z@mail.example.org", "(020) 7946 0958"] {
            let once = redact(t);
            assert_eq!(redact(&once), once);
        }
    }
}
