//! Okapi BM25 over a local corpus.
//!
//! score(D, Q) = Σ_{t ∈ Q} idf(t) · tf(t, D)·(k1 + 1) / (tf(t, D) + k1·(1 − b + b·|D|/avgdl))
//!
//! with idf(t) = max(ln((N − df + 0.5) / (df + 0.5)), IDF_FLOOR). The floor keeps
//! scores positive in tiny corpora where common terms would otherwise go
//! negative.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use crate::corpus::{chunk_document, Corpus, Document, DEFAULT_CHUNK_SIZE};
use crate::text::normalize_tokens;

use super::{SearchEngine, SearchError};

pub const IDF_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Index unit: whole documents, or fixed-size word chunks whose best score
/// stands in for their document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    #[default]
    Document,
    Chunk(usize),
}

/// Collection statistics needed by [`bm25_score`].
#[derive(Debug, Clone, Default)]
pub struct TermStats {
    pub n_docs: usize,
    pub avg_len: f64,
    pub doc_freq: HashMap<String, usize>,
}

impl TermStats {
    pub fn from_token_lists<'a>(docs: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut stats = TermStats::default();
        let mut total_len = 0usize;
        for tokens in docs {
            stats.n_docs += 1;
            total_len += tokens.len();
            let unique: BTreeSet<&String> = tokens.iter().collect();
            for t in unique {
                *stats.doc_freq.entry(t.clone()).or_default() += 1;
            }
        }
        if stats.n_docs > 0 {
            stats.avg_len = total_len as f64 / stats.n_docs as f64;
        }
        stats
    }

    pub fn df(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs as f64;
        let df = self.df(term) as f64;
        ((n - df + 0.5) / (df + 0.5)).ln().max(IDF_FLOOR)
    }
}

/// BM25 of one document (given as its normalized tokens) for a query.
/// Repeated query terms count once.
pub fn bm25_score(
    stats: &TermStats,
    doc_tokens: &[String],
    query_terms: &[String],
    params: Bm25Params,
) -> f64 {
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for t in doc_tokens {
        *tf.entry(t.as_str()).or_default() += 1;
    }
    let unique: BTreeSet<&String> = query_terms.iter().collect();
    unique
        .into_iter()
        .map(|term| {
            let f = tf.get(term.as_str()).copied().unwrap_or(0);
            term_score(stats, term, f, doc_tokens.len(), params)
        })
        .sum()
}

fn term_score(stats: &TermStats, term: &str, tf: usize, doc_len: usize, p: Bm25Params) -> f64 {
    if tf == 0 {
        return 0.0;
    }
    let tf = tf as f64;
    let norm = if stats.avg_len > 0.0 {
        1.0 - p.b + p.b * doc_len as f64 / stats.avg_len
    } else {
        1.0
    };
    stats.idf(term) * tf * (p.k1 + 1.0) / (tf + p.k1 * norm)
}

#[derive(Debug)]
struct Unit {
    doc: usize,
    len: usize,
}

/// Offline search engine backed by an in-memory inverted index.
#[derive(Debug)]
pub struct Bm25Engine {
    id: String,
    params: Bm25Params,
    docs: Vec<Document>,
    units: Vec<Unit>,
    stats: TermStats,
    postings: HashMap<String, Vec<(usize, usize)>>,
}

impl Bm25Engine {
    pub fn new(corpus: &Corpus, params: Bm25Params, granularity: Granularity) -> Self {
        let docs: Vec<Document> = corpus.iter().cloned().collect();
        let mut units = Vec::new();
        let mut unit_tokens: Vec<Vec<String>> = Vec::new();
        for (i, doc) in docs.iter().enumerate() {
            match granularity {
                Granularity::Document => {
                    let mut text =
                        String::with_capacity(doc.title().len() + doc.content().len() + 1);
                    text.push_str(doc.title());
                    text.push(' ');
                    text.push_str(doc.content());
                    unit_tokens.push(normalize_tokens(&text));
                    units.push(Unit { doc: i, len: 0 });
                }
                Granularity::Chunk(size) => {
                    for chunk in chunk_document(doc, size.max(1)) {
                        unit_tokens.push(normalize_tokens(&chunk.text));
                        units.push(Unit { doc: i, len: 0 });
                    }
                }
            }
        }
        let stats = TermStats::from_token_lists(unit_tokens.iter().map(Vec::as_slice));
        let mut postings: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        for (u, tokens) in unit_tokens.iter().enumerate() {
            units[u].len = tokens.len();
            let mut tf: HashMap<&String, usize> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, f) in tf {
                postings.entry(t.clone()).or_default().push((u, f));
            }
        }
        Bm25Engine {
            id: "bm25".to_owned(),
            params,
            docs,
            units,
            stats,
            postings,
        }
    }

    pub fn with_default_params(corpus: &Corpus) -> Self {
        Bm25Engine::new(corpus, Bm25Params::default(), Granularity::Document)
    }

    pub fn chunked(corpus: &Corpus, params: Bm25Params) -> Self {
        Bm25Engine::new(corpus, params, Granularity::Chunk(DEFAULT_CHUNK_SIZE))
    }

    pub fn stats(&self) -> &TermStats {
        &self.stats
    }

    /// Every matching document with its score, best first, ties by url.
    pub fn rank(&self, query: &str) -> Vec<(&Document, f64)> {
        let mut terms = normalize_tokens(query);
        terms.sort();
        terms.dedup();
        let mut unit_scores: HashMap<usize, f64> = HashMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            for &(u, tf) in list {
                let s = term_score(&self.stats, term, tf, self.units[u].len, self.params);
                *unit_scores.entry(u).or_default() += s;
            }
        }
        let mut doc_scores: HashMap<usize, f64> = HashMap::new();
        for (u, s) in unit_scores {
            let best = doc_scores
                .entry(self.units[u].doc)
                .or_insert(f64::NEG_INFINITY);
            if s > *best {
                *best = s;
            }
        }
        let mut ranked: Vec<(&Document, f64)> = doc_scores
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(d, s)| (&self.docs[d], s))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.url().cmp(b.0.url()))
        });
        ranked
    }
}

impl SearchEngine for Bm25Engine {
    fn id(&self) -> &str {
        &self.id
    }

    fn retrieve(&self, query: &str, n: usize) -> Result<Vec<Document>, SearchError> {
        Ok(self
            .rank(query)
            .into_iter()
            .take(n)
            .map(|(d, _)| d.clone())
            .collect())
    }
}
