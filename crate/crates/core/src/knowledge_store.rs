//! In-memory store of embedded chunks with exact top-k search and a
//! directory-based on-disk format.
//!
//! Layout of a store directory:
//!
//! * `meta.json`: `{"format": "ragkit-store", "version": 1, "dim": d, "count": n}`
//! * `chunks.jsonl`: one chunk per line, `{"id", "title", "section", "text", "embedding"}`
//!   with the embedding as base64 of little-endian `f32` values.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::dot_f32;

const STORE_FORMAT: &str = "ragkit-store";
const STORE_VERSION: u32 = 1;
const META_FILE: &str = "meta.json";
const CHUNKS_FILE: &str = "chunks.jsonl";

/// Anything with the three text fields of a chunk.
pub trait Passage {
    fn title(&self) -> &str;
    fn section(&self) -> &str;
    fn text(&self) -> &str;

    /// `title + " " + section + " " + text`, the string the context encoder and
    /// prompt formatter see.
    fn context_text(&self) -> String {
        format!("{} {} {}", self.title(), self.section(), self.text())
    }
}

/// One line of an ingestion corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub section: String,
    pub text: String,
}

impl CorpusRecord {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        section: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            section: section.into(),
            text: text.into(),
        }
    }

    pub fn into_chunk(self, embedding: Vec<f32>) -> KnowledgeChunk {
        KnowledgeChunk {
            id: self.id,
            title: self.title,
            section: self.section,
            text: self.text,
            embedding,
        }
    }
}

impl Passage for CorpusRecord {
    fn title(&self) -> &str {
        &self.title
    }
    fn section(&self) -> &str {
        &self.section
    }
    fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeChunk {
    pub id: String,
    pub title: String,
    pub section: String,
    pub text: String,
    pub embedding: Vec<f32>,
}

impl Passage for KnowledgeChunk {
    fn title(&self) -> &str {
        &self.title
    }
    fn section(&self) -> &str {
        &self.section
    }
    fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub chunk_id: String,
    pub score: f64,
}

/// Non-increasing score, then ascending id.
fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

#[derive(Debug, Clone)]
pub struct KnowledgeStore {
    dim: usize,
    chunks: Vec<KnowledgeChunk>,
    index: HashMap<String, usize>,
}

impl KnowledgeStore {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            chunks: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Chunks in insertion order.
    pub fn chunks(&self) -> &[KnowledgeChunk] {
        &self.chunks
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeChunk> {
        self.index.get(id).map(|&i| &self.chunks[i])
    }

    /// Adds every chunk or none of them.
    pub fn add_chunks(&mut self, chunks: Vec<KnowledgeChunk>) -> Result<usize> {
        let mut incoming = HashSet::with_capacity(chunks.len());
        for chunk in &chunks {
            if chunk.embedding.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: chunk.embedding.len(),
                });
            }
            if self.index.contains_key(&chunk.id) || !incoming.insert(chunk.id.as_str()) {
                return Err(Error::DuplicateId(chunk.id.clone()));
            }
        }
        let added = chunks.len();
        for chunk in chunks {
            self.index.insert(chunk.id.clone(), self.chunks.len());
            self.chunks.push(chunk);
        }
        Ok(added)
    }

    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<RetrievalResult>> {
        self.top_k_with(query, k, Execution::default())
    }

    /// Exact full-scan search. Returns `min(k, len)` results in rank order.
    pub fn top_k_with(
        &self,
        query: &[f64],
        k: usize,
        exec: Execution,
    ) -> Result<Vec<RetrievalResult>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        let scores = exec.map(&self.chunks, |c| dot_f32(query, &c.embedding));
        let mut order: Vec<usize> = (0..self.chunks.len()).collect();
        let key = |i: usize| (scores[i], self.chunks[i].id.as_str());
        let k = k.min(order.len());
        if k < order.len() {
            order.select_nth_unstable_by(k, |&a, &b| rank_order(key(a), key(b)));
            order.truncate(k);
        }
        order.sort_unstable_by(|&a, &b| rank_order(key(a), key(b)));
        Ok(order
            .into_iter()
            .map(|i| RetrievalResult {
                chunk_id: self.chunks[i].id.clone(),
                score: scores[i],
            })
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(File::create(dir.join(CHUNKS_FILE))?);
        for chunk in &self.chunks {
            let line = StoredChunk {
                id: chunk.id.clone(),
                title: chunk.title.clone(),
                section: chunk.section.clone(),
                text: chunk.text.clone(),
                embedding: encode_f32s(&chunk.embedding),
            };
            serde_json::to_writer(&mut out, &line).map_err(io_from_json)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        // meta.json last: a directory without it never loads as a store.
        let meta = StoreMeta {
            format: STORE_FORMAT.into(),
            version: STORE_VERSION,
            dim: self.dim,
            count: self.chunks.len(),
        };
        let mut meta_json = serde_json::to_vec_pretty(&meta).map_err(io_from_json)?;
        meta_json.push(b'\n');
        fs::write(dir.join(META_FILE), meta_json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        if !meta_path.is_file() {
            return Err(Error::Format(format!("{} not found", meta_path.display())));
        }
        let meta: StoreMeta = serde_json::from_slice(&fs::read(&meta_path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
        if meta.format != STORE_FORMAT {
            return Err(Error::Format(format!("unknown store format {:?}", meta.format)));
        }
        if meta.version != STORE_VERSION {
            return Err(Error::Format(format!(
                "unsupported store version {}",
                meta.version
            )));
        }
        if meta.dim == 0 {
            return Err(Error::Format("store dimension must be positive".into()));
        }
        let reader = BufReader::new(File::open(dir.join(CHUNKS_FILE))?);
        let mut chunks = Vec::with_capacity(meta.count);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let stored: StoredChunk = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{CHUNKS_FILE} line {}: {e}", lineno + 1)))?;
            let embedding = decode_f32s(&stored.embedding)
                .map_err(|e| Error::Format(format!("{CHUNKS_FILE} line {}: {e}", lineno + 1)))?;
            chunks.push(KnowledgeChunk {
                id: stored.id,
                title: stored.title,
                section: stored.section,
                text: stored.text,
                embedding,
            });
        }
        if chunks.len() != meta.count {
            return Err(Error::Format(format!(
                "meta.json declares {} chunks, found {}",
                meta.count,
                chunks.len()
            )));
        }
        let mut store = Self::new(meta.dim);
        store.add_chunks(chunks).map_err(|e| Error::Format(e.to_string()))?;
        Ok(store)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreMeta {
    format: String,
    version: u32,
    dim: usize,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredChunk {
    id: String,
    title: String,
    section: String,
    text: String,
    embedding: String,
}

pub(crate) fn encode_f32s(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    BASE64.encode(bytes)
}

pub(crate) fn decode_f32s(encoded: &str) -> std::result::Result<Vec<f32>, String> {
    let bytes = BASE64.decode(encoded).map_err(|e| format!("bad base64: {e}"))?;
    if bytes.len() % 4 != 0 {
        return Err(format!("{} bytes is not a whole number of f32 values", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn io_from_json(e: serde_json::Error) -> Error {
    Error::Io(e.into())
}

/// Reads an ingestion corpus (JSONL, fields `id`, `title`, `section`, `text`).
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
