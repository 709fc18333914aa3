//! Dense retrieval: embed text into vectors, rank chunks by inner product.
//!
//! Search is exact (a full scan with a bounded heap), so results always equal
//! a brute-force ranking. The default [`HashingEmbedder`] feature-hashes
//! lowercased unigrams and bigrams into signed buckets and L2-normalizes; any
//! bi-encoder can be plugged in through [`Embedder`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::text::normalize_tokens;

pub const DEFAULT_DIMS: usize = 4096;
pub const DEFAULT_TOP_N: usize = 5;

const MAGIC: &[u8; 4] = b"SEAD";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("no documents to score")]
    NoDocuments,
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("vector has {got} dims, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in vector")]
    NonFinite,
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, DenseError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DenseError::NonFinite);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }
}

/// Inner product accumulated in f64, left to right.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn dims(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, DenseError>;
}

/// Signed feature hashing of unigrams and bigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dims: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dims: DEFAULT_DIMS }
    }
}

impl HashingEmbedder {
    pub fn new(dims: usize) -> Self {
        assert!(dims > 0, "dims must be positive");
        HashingEmbedder { dims }
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashingEmbedder {
    fn id(&self) -> String {
        format!("hash-uni-bi-{}", self.dims)
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, DenseError> {
        let tokens = normalize_tokens(text);
        if tokens.is_empty() {
            return Err(DenseError::EmptyText);
        }
        let mut acc = vec![0f64; self.dims];
        let bigrams = tokens.windows(2).map(|w| format!("{} {}", w[0], w[1]));
        for feature in tokens.iter().cloned().chain(bigrams) {
            let h = fnv1a64(feature.as_bytes());
            let bucket = (h % self.dims as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // every feature cancelled out
            return EmbeddingVector::new(vec![0.0; self.dims]);
        }
        EmbeddingVector::new(acc.into_iter().map(|v| (v / norm) as f32).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedChunks {
    pub entries: Vec<(String, f64)>,
    pub query_digest: String,
}

impl RankedChunks {
    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, s)| *s).collect()
    }
}

/// Candidate ordering: higher score first, then lower chunk id.
#[derive(Debug, PartialEq)]
struct Candidate<'a> {
    score: f64,
    id: &'a str,
}

impl Eq for Candidate<'_> {}

impl Ord for Candidate<'_> {
    // "better" compares as smaller so the max-heap root is the worst kept entry
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Accumulates vectors before freezing into a [`DenseIndex`].
#[derive(Debug)]
pub struct DenseIndexBuilder {
    dims: usize,
    embedder_id: String,
    ids: Vec<String>,
    vectors: Vec<f32>,
}

impl DenseIndexBuilder {
    pub fn new(dims: usize, embedder_id: impl Into<String>) -> Self {
        DenseIndexBuilder {
            dims,
            embedder_id: embedder_id.into(),
            ids: Vec::new(),
            vectors: Vec::new(),
        }
    }

    pub fn add(
        &mut self,
        id: impl Into<String>,
        vector: &EmbeddingVector,
    ) -> Result<(), DenseError> {
        if vector.dims() != self.dims {
            return Err(DenseError::DimensionMismatch {
                expected: self.dims,
                got: vector.dims(),
            });
        }
        self.ids.push(id.into());
        self.vectors.extend_from_slice(vector.values());
        Ok(())
    }

    /// Embeds and adds every chunk; chunks whose text embeds to nothing are skipped.
    pub fn add_chunks(
        &mut self,
        embedder: &dyn Embedder,
        chunks: &[Chunk],
    ) -> Result<usize, DenseError> {
        let embedded: Vec<_> = chunks
            .par_iter()
            .map(|c| (c.id(), embedder.embed(&c.text)))
            .collect();
        let mut added = 0;
        for (id, v) in embedded {
            match v {
                Ok(v) => {
                    self.add(id, &v)?;
                    added += 1;
                }
                Err(DenseError::EmptyText) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(added)
    }

    pub fn freeze(self) -> DenseIndex {
        DenseIndex {
            dims: self.dims,
            embedder_id: self.embedder_id,
            ids: self.ids,
            vectors: self.vectors,
        }
    }
}

/// Immutable flat index; concurrent queries are safe.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dims: usize,
    embedder_id: String,
    ids: Vec<String>,
    vectors: Vec<f32>,
}

impl DenseIndex {
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dims..(i + 1) * self.dims]
    }

    /// Exact top-`n` by inner product, ties by ascending chunk id.
    pub fn top_n(&self, query: &EmbeddingVector, n: usize) -> Result<RankedChunks, DenseError> {
        if query.dims() != self.dims {
            return Err(DenseError::DimensionMismatch {
                expected: self.dims,
                got: query.dims(),
            });
        }
        let keep = n.min(self.len());
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(keep + 1);
        if keep > 0 {
            for (i, id) in self.ids.iter().enumerate() {
                let cand = Candidate {
                    score: dot(query.values(), self.vector(i)),
                    id,
                };
                if heap.len() < keep {
                    heap.push(cand);
                } else if cand < *heap.peek().expect("heap is full") {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        let entries = heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.id.to_owned(), c.score))
            .collect();
        Ok(RankedChunks {
            entries,
            query_digest: vector_digest(query),
        })
    }

    /// [`Self::top_n`] for many queries in parallel.
    pub fn top_n_batch(
        &self,
        queries: &[EmbeddingVector],
        n: usize,
    ) -> Result<Vec<RankedChunks>, DenseError> {
        queries.par_iter().map(|q| self.top_n(q, n)).collect()
    }

    /// Writes `magic, version, dims, count, embedder_id, vectors, ids`, all
    /// integers little-endian and strings length-prefixed (u32).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DenseError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.dims as u32).to_le_bytes())?;
        out.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        write_str(&mut out, &self.embedder_id)?;
        for v in &self.vectors {
            out.write_all(&v.to_le_bytes())?;
        }
        for id in &self.ids {
            write_str(&mut out, id)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DenseError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DenseError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(DenseError::Format(format!("unsupported version {version}")));
        }
        let dims = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let embedder_id = read_str(&mut r)?;
        let mut block = vec![0u8; dims * count * 4];
        r.read_exact(&mut block)?;
        let vectors = block
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let ids = (0..count)
            .map(|_| read_str(&mut r))
            .collect::<Result<_, _>>()?;
        Ok(DenseIndex {
            dims,
            embedder_id,
            ids,
            vectors,
        })
    }
}

fn write_str(out: &mut impl Write, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String, DenseError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| DenseError::Format(e.to_string()))
}

/// Hex SHA-256 of the vector's little-endian bytes.
pub fn vector_digest(v: &EmbeddingVector) -> String {
    let mut hasher = Sha256::new();
    for x in v.values() {
        hasher.update(x.to_le_bytes());
    }
    hex_lower(&hasher.finalize())
}

pub(crate) fn hex_lower(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Softmax of `scores / temperature`: the document prior for RAG-Token.
pub fn retrieval_distribution(scores: &[f64], temperature: f64) -> Result<Vec<f64>, DenseError> {
    if scores.is_empty() {
        return Err(DenseError::NoDocuments);
    }
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(DenseError::BadTemperature(temperature));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .map(|s| ((s - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}
