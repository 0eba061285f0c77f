use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::encoder::{cosine, tokenize, Embedder, HashEncoder};
use super::segment::segment;
use super::{rank_hits, DocumentChunk, HitSource, Query, RagError, RetrievalHit};
use crate::num::Scalar;

/// How many top hits [`graph_expand`] widens by default.
pub const DEFAULT_EXPAND_M: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Chunks plus the three indexes derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase<F: Scalar = f64> {
    encoder_dim: usize,
    chunks: BTreeMap<String, DocumentChunk<F>>,
    /// token -> chunk id -> term frequency
    inverted: BTreeMap<String, BTreeMap<String, u32>>,
    /// chunk id -> sequence neighbours within the same document
    graph: BTreeMap<String, Vec<String>>,
    bm25: Bm25Params,
}

impl<F: Scalar> KnowledgeBase<F> {
    pub fn new(encoder_dim: usize) -> Self {
        Self {
            encoder_dim,
            chunks: BTreeMap::new(),
            inverted: BTreeMap::new(),
            graph: BTreeMap::new(),
            bm25: Bm25Params::default(),
        }
    }

    pub fn encoder_dim(&self) -> usize {
        self.encoder_dim
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> impl Iterator<Item = &DocumentChunk<F>> {
        self.chunks.values()
    }

    pub fn get(&self, chunk_id: &str) -> Option<&DocumentChunk<F>> {
        self.chunks.get(chunk_id)
    }

    pub fn inverted(&self) -> &BTreeMap<String, BTreeMap<String, u32>> {
        &self.inverted
    }

    pub fn graph(&self) -> &BTreeMap<String, Vec<String>> {
        &self.graph
    }

    pub fn doc_ids(&self) -> BTreeSet<&str> {
        self.chunks.values().map(|c| c.doc_id.as_str()).collect()
    }

    /// Segments, embeds with the reference encoder and indexes a document,
    /// replacing any earlier version of the same `doc_id`. Returns the number
    /// of chunks indexed.
    pub fn ingest(&mut self, doc_id: &str, text: &str, max_chars: usize) -> Result<usize, RagError> {
        let encoder = HashEncoder { dim: self.encoder_dim };
        self.ingest_with(doc_id, text, max_chars, &encoder)
    }

    pub fn ingest_with(
        &mut self,
        doc_id: &str,
        text: &str,
        max_chars: usize,
        embedder: &dyn Embedder<F>,
    ) -> Result<usize, RagError> {
        if embedder.dim() != self.encoder_dim {
            return Err(RagError::DimensionMismatch { expected: self.encoder_dim, got: embedder.dim() });
        }
        let mut chunks = segment::<F>(doc_id, text, max_chars)?;
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        for (chunk, vector) in chunks.iter_mut().zip(vectors) {
            chunk.vector = vector;
            for token in tokenize(&chunk.text) {
                *chunk.keywords.entry(token).or_insert(0) += 1;
            }
        }
        let count = chunks.len();
        self.remove_document(doc_id);
        self.insert_chunks(chunks)?;
        Ok(count)
    }

    /// Adds already-embedded chunks and rebuilds the indexes.
    pub fn insert_chunks(&mut self, chunks: Vec<DocumentChunk<F>>) -> Result<(), RagError> {
        for chunk in chunks {
            if chunk.vector.len() != self.encoder_dim {
                return Err(RagError::DimensionMismatch { expected: self.encoder_dim, got: chunk.vector.len() });
            }
            self.chunks.insert(chunk.chunk_id.clone(), chunk);
        }
        self.rebuild_indexes();
        Ok(())
    }

    pub fn remove_document(&mut self, doc_id: &str) -> usize {
        let before = self.chunks.len();
        self.chunks.retain(|_, c| c.doc_id != doc_id);
        let removed = before - self.chunks.len();
        if removed > 0 {
            self.rebuild_indexes();
        }
        removed
    }

    /// Recomputes the inverted and graph indexes from `chunks`.
    pub fn rebuild_indexes(&mut self) {
        let (inverted, graph) = derive_indexes(&self.chunks);
        self.inverted = inverted;
        self.graph = graph;
    }

    /// True when the stored indexes equal ones rebuilt from the chunks.
    pub fn indexes_consistent(&self) -> bool {
        let (inverted, graph) = derive_indexes(&self.chunks);
        inverted == self.inverted && graph == self.graph
    }

    /// Exact cosine scan, top-k, ties by chunk id.
    pub fn vector_search(&self, query: &Query<F>) -> Result<Vec<RetrievalHit<F>>, RagError> {
        if self.is_empty() {
            return Err(RagError::EmptyKnowledgeBase);
        }
        let mut hits: Vec<RetrievalHit<F>> = self
            .chunks
            .values()
            .map(|c| RetrievalHit {
                chunk_id: c.chunk_id.clone(),
                score: cosine(&query.vector, &c.vector),
                source: HitSource::Vector,
                rank: 0,
            })
            .collect();
        rank_hits(&mut hits);
        hits.truncate(query.k);
        Ok(hits)
    }

    /// BM25 over the inverted index. Only chunks sharing at least one token
    /// with the query are returned.
    pub fn keyword_search(&self, query: &Query<F>) -> Result<Vec<RetrievalHit<F>>, RagError> {
        if self.is_empty() {
            return Err(RagError::EmptyKnowledgeBase);
        }
        let n_docs = self.chunks.len() as f64;
        let total_len: f64 = self.chunks.values().map(|c| f64::from(c.len_tokens())).sum();
        let avgdl = total_len / n_docs;
        let Bm25Params { k1, b } = self.bm25;
        let terms: BTreeSet<String> = tokenize(&query.text).into_iter().collect();
        let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
        for term in &terms {
            let Some(postings) = self.inverted.get(term) else { continue };
            let n = postings.len() as f64;
            let idf = (1.0 + (n_docs - n + 0.5) / (n + 0.5)).ln();
            for (chunk_id, tf) in postings {
                let tf = f64::from(*tf);
                let dl = f64::from(self.chunks[chunk_id].len_tokens());
                let norm = tf + k1 * (1.0 - b + b * dl / avgdl);
                *scores.entry(chunk_id.as_str()).or_insert(0.0) += idf * tf * (k1 + 1.0) / norm;
            }
        }
        let mut hits: Vec<RetrievalHit<F>> = scores
            .into_iter()
            .map(|(id, s)| RetrievalHit {
                chunk_id: id.to_string(),
                score: F::lit(s),
                source: HitSource::Keyword,
                rank: 0,
            })
            .collect();
        rank_hits(&mut hits);
        hits.truncate(query.k);
        Ok(hits)
    }
}

type Postings = BTreeMap<String, BTreeMap<String, u32>>;

fn derive_indexes<F: Scalar>(chunks: &BTreeMap<String, DocumentChunk<F>>) -> (Postings, BTreeMap<String, Vec<String>>) {
    let mut inverted: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    let mut by_doc: BTreeMap<&str, BTreeMap<usize, &str>> = BTreeMap::new();
    for chunk in chunks.values() {
        for (token, tf) in &chunk.keywords {
            inverted.entry(token.clone()).or_default().insert(chunk.chunk_id.clone(), *tf);
        }
        by_doc.entry(&chunk.doc_id).or_default().insert(chunk.seq, &chunk.chunk_id);
    }
    let mut graph = BTreeMap::new();
    for seqs in by_doc.values() {
        for (seq, id) in seqs {
            let mut neighbours = Vec::new();
            if let Some(prev) = seq.checked_sub(1).and_then(|p| seqs.get(&p)) {
                neighbours.push(prev.to_string());
            }
            if let Some(next) = seqs.get(&(seq + 1)) {
                neighbours.push(next.to_string());
            }
            graph.insert(id.to_string(), neighbours);
        }
    }
    (inverted, graph)
}

/// Adds the sequence neighbours of the top `m` hits at half their parent's
/// score, then re-ranks. Chunks already present keep their original score.
pub fn graph_expand<F: Scalar>(kb: &KnowledgeBase<F>, hits: &[RetrievalHit<F>], m: usize) -> Vec<RetrievalHit<F>> {
    let mut out: Vec<RetrievalHit<F>> = hits.to_vec();
    let mut present: BTreeSet<String> = hits.iter().map(|h| h.chunk_id.clone()).collect();
    let mut parents: Vec<&RetrievalHit<F>> = hits.iter().collect();
    parents.sort_by_key(|h| h.rank);
    let half = F::lit(0.5);
    for parent in parents.into_iter().take(m) {
        let Some(neighbours) = kb.graph.get(&parent.chunk_id) else { continue };
        for n in neighbours {
            if present.insert(n.clone()) {
                out.push(RetrievalHit {
                    chunk_id: n.clone(),
                    score: parent.score * half,
                    source: HitSource::Graph,
                    rank: 0,
                });
            }
        }
    }
    rank_hits(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rag::DEFAULT_DIM;

    fn para(tag: &str) -> String {
        (0..30).map(|i| format!("{tag}{i:03}")).collect::<Vec<_>>().join(" ")
    }

    fn kb_with(docs: &[(&str, &str)]) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new(DEFAULT_DIM);
        for (id, text) in docs {
            kb.ingest(id, text, 512).unwrap();
        }
        kb
    }

    fn q(text: &str, k: usize) -> Query {
        Query::new(text, k, DEFAULT_DIM).unwrap()
    }

    #[test]
    fn empty_kb_errors() {
        let kb: KnowledgeBase = KnowledgeBase::new(DEFAULT_DIM);
        assert_eq!(kb.vector_search(&q("x", 1)), Err(RagError::EmptyKnowledgeBase));
        assert_eq!(kb.keyword_search(&q("x", 1)), Err(RagError::EmptyKnowledgeBase));
    }

    #[test]
    fn exact_text_ranks_first() {
        let kb = kb_with(&[("a", "revenue grew in march"), ("b", "churn fell in april"), ("c", "headcount flat")]);
        let hits = kb.vector_search(&q("churn fell in april", 3)).unwrap();
        assert_eq!(hits[0].chunk_id, "b#0000");
        assert!((hits[0].score - 1.0).abs() < 1e-9);
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn k_larger_than_corpus_returns_all() {
        let kb = kb_with(&[("a", "one"), ("b", "two")]);
        assert_eq!(kb.vector_search(&q("one", 10)).unwrap().len(), 2);
    }

    #[test]
    fn keyword_unique_token_and_no_overlap() {
        let kb = kb_with(&[("a", "apples and pears"), ("b", "pears only"), ("c", "plums")]);
        let hits = kb.keyword_search(&q("apples", 5)).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].chunk_id, "a#0000");
        assert!(kb.keyword_search(&q("bananas", 5)).unwrap().is_empty());
    }

    #[test]
    fn reingest_replaces_document() {
        let mut kb = kb_with(&[("doc", &format!("{}\n\n{}", para("a"), para("b")))]);
        assert_eq!(kb.len(), 2);
        assert_eq!(kb.ingest("doc", &para("c"), 512).unwrap(), 1);
        assert_eq!(kb.len(), 1);
        assert!(kb.indexes_consistent());
        assert!(kb.inverted().get("a000").is_none());
    }

    #[test]
    fn graph_expand_middle_chunk() {
        let text = format!("{}\n\n{}\n\n{}", para("a"), para("b"), para("c"));
        let kb = kb_with(&[("doc", &text)]);
        let hits = vec![RetrievalHit { chunk_id: "doc#0001".into(), score: 0.8, source: HitSource::Vector, rank: 1 }];
        let out = graph_expand(&kb, &hits, 3);
        let got: Vec<(&str, f64, HitSource, usize)> =
            out.iter().map(|h| (h.chunk_id.as_str(), h.score, h.source, h.rank)).collect();
        assert_eq!(
            got,
            vec![
                ("doc#0001", 0.8, HitSource::Vector, 1),
                ("doc#0000", 0.4, HitSource::Graph, 2),
                ("doc#0002", 0.4, HitSource::Graph, 3),
            ]
        );
    }

    #[test]
    fn graph_expand_single_chunk_and_dedup() {
        let kb = kb_with(&[("solo", "only chunk"), ("pair", &format!("{}\n\n{}", para("x"), para("y")))]);
        let solo = vec![RetrievalHit { chunk_id: "solo#0000".into(), score: 0.5, source: HitSource::Vector, rank: 1 }];
        assert_eq!(graph_expand(&kb, &solo, 3), solo);
        let both = vec![
            RetrievalHit { chunk_id: "pair#0001".into(), score: 0.9, source: HitSource::Vector, rank: 1 },
            RetrievalHit { chunk_id: "pair#0000".into(), score: 0.1, source: HitSource::Vector, rank: 2 },
        ];
        let out = graph_expand(&kb, &both, 3);
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].score, 0.1);
    }

    #[test]
    fn expand_respects_m() {
        let text = format!("{}\n\n{}\n\n{}", para("a"), para("b"), para("c"));
        let kb = kb_with(&[("doc", &text)]);
        let hits = vec![RetrievalHit { chunk_id: "doc#0000".into(), score: 0.8, source: HitSource::Vector, rank: 1 }];
        assert_eq!(graph_expand(&kb, &hits, 0).len(), 1);
    }
}
