use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{DocumentChunk, KnowledgeBase, RagError};
use crate::num::Scalar;

/// Contents of a space's `meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceMeta {
    pub encoder_dim: usize,
    pub chunk_count: usize,
    pub doc_count: usize,
}

pub fn valid_space_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'_' | b'-'))
}

type Shared<F> = Arc<RwLock<KnowledgeBase<F>>>;

/// Named knowledge bases persisted one directory per space:
/// `chunks.jsonl` (one chunk per line) and `meta.json`.
///
/// Reads share a space; ingestion takes its write lock.
pub struct KnowledgeSpaces<F: Scalar = f64> {
    root: PathBuf,
    encoder_dim: usize,
    open: Mutex<HashMap<String, Shared<F>>>,
}

impl<F: Scalar> std::fmt::Debug for KnowledgeSpaces<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeSpaces").field("root", &self.root).finish_non_exhaustive()
    }
}

fn storage(e: impl std::fmt::Display) -> RagError {
    RagError::Storage(e.to_string())
}

impl<F: Scalar> KnowledgeSpaces<F> {
    pub fn new(root: impl Into<PathBuf>, encoder_dim: usize) -> Self {
        Self { root: root.into(), encoder_dim, open: Mutex::default() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Opens (loading from disk on first use) or creates a space.
    pub fn space(&self, name: &str) -> Result<Shared<F>, RagError> {
        if !valid_space_name(name) {
            return Err(RagError::InvalidSpaceName(name.to_string()));
        }
        let mut open = self.open.lock().unwrap();
        if let Some(kb) = open.get(name) {
            return Ok(kb.clone());
        }
        let kb = Arc::new(RwLock::new(load_space(&self.dir(name), self.encoder_dim)?));
        open.insert(name.to_string(), kb.clone());
        Ok(kb)
    }

    /// Names of spaces on disk or open in memory.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.open.lock().unwrap().keys().cloned().collect();
        if let Ok(entries) = fs::read_dir(&self.root) {
            for e in entries.flatten() {
                let name = e.file_name().to_string_lossy().into_owned();
                if e.path().join("meta.json").is_file() && valid_space_name(&name) && !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        names.sort();
        names
    }

    /// Ingests one document into a space and persists it.
    pub fn ingest(&self, name: &str, doc_id: &str, text: &str, max_chars: usize) -> Result<usize, RagError> {
        let space = self.space(name)?;
        let mut kb = space.write().unwrap();
        let count = kb.ingest(doc_id, text, max_chars)?;
        save_space(&self.dir(name), &kb)?;
        Ok(count)
    }

    pub fn save(&self, name: &str) -> Result<(), RagError> {
        let space = self.space(name)?;
        let kb = space.read().unwrap();
        save_space(&self.dir(name), &kb)
    }
}

pub fn save_space<F: Scalar>(dir: &Path, kb: &KnowledgeBase<F>) -> Result<(), RagError> {
    fs::create_dir_all(dir).map_err(storage)?;
    let tmp = dir.join("chunks.jsonl.tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp).map_err(storage)?);
        for chunk in kb.chunks() {
            serde_json::to_writer(&mut w, chunk).map_err(storage)?;
            w.write_all(b"\n").map_err(storage)?;
        }
        w.flush().map_err(storage)?;
    }
    fs::rename(&tmp, dir.join("chunks.jsonl")).map_err(storage)?;
    let meta = SpaceMeta { encoder_dim: kb.encoder_dim(), chunk_count: kb.len(), doc_count: kb.doc_ids().len() };
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta).map_err(storage)?).map_err(storage)
}

pub fn load_space<F: Scalar>(dir: &Path, default_dim: usize) -> Result<KnowledgeBase<F>, RagError> {
    let meta_path = dir.join("meta.json");
    if !meta_path.is_file() {
        return Ok(KnowledgeBase::new(default_dim));
    }
    let meta: SpaceMeta = serde_json::from_slice(&fs::read(&meta_path).map_err(storage)?).map_err(storage)?;
    let mut kb = KnowledgeBase::new(meta.encoder_dim);
    let file = fs::File::open(dir.join("chunks.jsonl")).map_err(storage)?;
    let mut chunks = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(storage)?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk: DocumentChunk<F> =
            serde_json::from_str(&line).map_err(|e| RagError::Storage(format!("chunks.jsonl line {}: {e}", i + 1)))?;
        chunks.push(chunk);
    }
    kb.insert_chunks(chunks)?;
    if kb.len() != meta.chunk_count {
        return Err(RagError::Storage(format!("meta.json lists {} chunks, found {}", meta.chunk_count, kb.len())));
    }
    Ok(kb)
}
