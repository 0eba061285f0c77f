use super::{DocumentChunk, RagError};
use crate::num::Scalar;

pub const DEFAULT_MAX_CHARS: usize = 512;
pub const MIN_MAX_CHARS: usize = 64;

/// Splits a document into unindexed chunks.
///
/// Paragraphs are separated by blank lines. A paragraph longer than
/// `max_chars` is cut at the last whitespace within the limit (or hard at the
/// limit when there is none). Runs of consecutive pieces that are each
/// shorter than `max_chars / 4` are merged while the result fits.
pub fn segment<F: Scalar>(doc_id: &str, text: &str, max_chars: usize) -> Result<Vec<DocumentChunk<F>>, RagError> {
    if max_chars < MIN_MAX_CHARS {
        return Err(RagError::InvalidMaxChars(max_chars));
    }
    let mut pieces = Vec::new();
    for para in paragraphs(text) {
        split_long(&para, max_chars, &mut pieces);
    }
    let merged = merge_small(pieces, max_chars);
    Ok(merged
        .into_iter()
        .enumerate()
        .map(|(seq, text)| DocumentChunk {
            chunk_id: DocumentChunk::<F>::chunk_id_for(doc_id, seq),
            doc_id: doc_id.to_string(),
            seq,
            text,
            vector: Vec::new(),
            keywords: Default::default(),
        })
        .collect())
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(current.join("\n").trim().to_string());
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(current.join("\n").trim().to_string());
    }
    out
}

fn split_long(para: &str, max_chars: usize, out: &mut Vec<String>) {
    let mut rest = para;
    while rest.chars().count() > max_chars {
        let chars: Vec<(usize, char)> = rest.char_indices().take(max_chars + 1).collect();
        // cut before a whitespace char at char position 1..=max_chars
        let cut = (1..=max_chars).rev().find(|&p| chars[p].1.is_whitespace());
        let (head, tail) = match cut {
            Some(p) => {
                let byte = chars[p].0;
                (rest[..byte].trim_end(), rest[byte..].trim_start())
            }
            None => {
                let byte = chars[max_chars].0;
                (&rest[..byte], &rest[byte..])
            }
        };
        if !head.is_empty() {
            out.push(head.to_string());
        }
        rest = tail;
    }
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
}

fn merge_small(pieces: Vec<String>, max_chars: usize) -> Vec<String> {
    let small = |s: &str| s.chars().count() < max_chars / 4;
    let mut out: Vec<String> = Vec::new();
    let mut open_small = false;
    for piece in pieces {
        let fits = out.last().is_some_and(|last| last.chars().count() + 2 + piece.chars().count() <= max_chars);
        if open_small && small(&piece) && fits {
            let last = out.last_mut().expect("open run has a chunk");
            last.push_str("\n\n");
            last.push_str(&piece);
        } else {
            open_small = small(&piece);
            out.push(piece);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(text: &str, max: usize) -> Vec<String> {
        segment::<f64>("d", text, max).unwrap().into_iter().map(|c| c.text).collect()
    }

    fn long_para(words: usize, tag: &str) -> String {
        (0..words).map(|i| format!("{tag}{i:03}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn two_paragraphs() {
        let a = long_para(30, "a");
        let b = long_para(30, "b");
        let chunks = segment::<f64>("d", &format!("{a}\n\n{b}\n"), 512).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text, a);
        assert_eq!(chunks[1].seq, 1);
        assert_eq!(chunks[1].chunk_id, "d#0001");
    }

    #[test]
    fn empty_and_blank_inputs() {
        assert!(seg("", 512).is_empty());
        assert!(seg("\n  \n\t\n", 512).is_empty());
    }

    #[test]
    fn rejects_tiny_limit() {
        assert_eq!(segment::<f64>("d", "x", 63).unwrap_err(), RagError::InvalidMaxChars(63));
    }

    #[test]
    fn small_paragraphs_merge() {
        let out = seg("one\n\ntwo\n\nthree", 64);
        assert_eq!(out, vec!["one\n\ntwo\n\nthree"]);
    }

    #[test]
    fn merge_stops_at_large_piece() {
        let big = long_para(10, "w");
        let out = seg(&format!("s1\n\n{big}\n\ns2\n\ns3"), 64);
        assert_eq!(out, vec!["s1".to_string(), big, "s2\n\ns3".to_string()]);
    }

    #[test]
    fn hard_cut_without_whitespace() {
        let s = "x".repeat(150);
        let out = seg(&s, 64);
        assert_eq!(out.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![64, 64, 22]);
    }
}
