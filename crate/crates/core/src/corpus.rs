//! Document store standing in for the web: a local snapshot keyed by URL,
//! fixed-size word chunking, and Wikipedia title resolution.
//!
//! The snapshot on disk is JSON Lines with exactly the keys
//! `{"url","title","content","source"}`. The domain is derived from the URL on
//! load and never stored.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use percent_encoding::percent_decode_str;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::text;

pub const DEFAULT_CHUNK_SIZE: usize = 100;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid url {url:?}: {reason}")]
    InvalidUrl { url: String, reason: String },
    #[error("document {url:?} has empty content")]
    EmptyContent { url: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    CommonCrawl,
    Wikipedia,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DocumentRecord", into = "DocumentRecord")]
pub struct Document {
    url: String,
    title: String,
    content: String,
    domain: String,
    source: Source,
}

/// On-disk shape of a [`Document`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentRecord {
    url: String,
    title: String,
    content: String,
    source: Source,
}

impl TryFrom<DocumentRecord> for Document {
    type Error = CorpusError;

    fn try_from(r: DocumentRecord) -> Result<Self, Self::Error> {
        Document::new(r.url, r.title, r.content, r.source)
    }
}

impl From<Document> for DocumentRecord {
    fn from(d: Document) -> Self {
        DocumentRecord {
            url: d.url,
            title: d.title,
            content: d.content,
            source: d.source,
        }
    }
}

impl Document {
    pub fn new(
        url: impl Into<String>,
        title: impl Into<String>,
        content: impl Into<String>,
        source: Source,
    ) -> Result<Self, CorpusError> {
        let url = url.into();
        let content = content.into();
        let domain = domain_of(&url)?;
        if content.trim().is_empty() && source != Source::Live {
            return Err(CorpusError::EmptyContent { url });
        }
        Ok(Document {
            url,
            title: title.into(),
            content,
            domain,
            source,
        })
    }

    /// A placeholder for a live search hit whose page content is unknown.
    pub fn live_placeholder(
        url: impl Into<String>,
        title: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        Document::new(url, title, String::new(), Source::Live)
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn content(&self) -> &str {
        &self.content
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn source(&self) -> Source {
        self.source
    }
}

/// Lowercased host of `url`.
pub fn domain_of(url: &str) -> Result<String, CorpusError> {
    if url.is_empty() {
        return Err(CorpusError::InvalidUrl {
            url: url.to_owned(),
            reason: "empty".into(),
        });
    }
    let parsed = Url::parse(url).map_err(|e| CorpusError::InvalidUrl {
        url: url.to_owned(),
        reason: e.to_string(),
    })?;
    parsed
        .host_str()
        .map(str::to_lowercase)
        .ok_or_else(|| CorpusError::InvalidUrl {
            url: url.to_owned(),
            reason: "no host".into(),
        })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_url: String,
    pub ordinal: usize,
    pub text: String,
    pub word_count: usize,
}

impl Chunk {
    /// Stable identifier used by the dense index: `url#ordinal`.
    pub fn id(&self) -> String {
        format!("{}#{}", self.doc_url, self.ordinal)
    }
}

/// Splits a document into consecutive windows of `chunk_size` words.
///
/// # Panics
///
/// Panics if `chunk_size` is zero.
pub fn chunk_document(doc: &Document, chunk_size: usize) -> Vec<Chunk> {
    assert!(chunk_size >= 1, "chunk_size must be positive");
    let words: Vec<&str> = text::words(&doc.content).collect();
    words
        .chunks(chunk_size)
        .enumerate()
        .map(|(ordinal, window)| Chunk {
            doc_url: doc.url.clone(),
            ordinal,
            text: window.join(" "),
            word_count: window.len(),
        })
        .collect()
}

/// Title of an English-or-other Wikipedia article URL, e.g.
/// `https://en.wikipedia.org/wiki/Rafael_Nadal` gives `Rafael Nadal`.
pub fn extract_wikipedia_title(url: &str) -> Option<String> {
    let parsed = Url::parse(url).ok()?;
    let host = parsed.host_str()?.to_lowercase();
    if !(host == "wikipedia.org" || host.ends_with(".wikipedia.org")) {
        return None;
    }
    let path = parsed.path();
    let rest = path.strip_prefix("/wiki/")?;
    let segment = rest.rsplit('/').next()?;
    if segment.is_empty() {
        return None;
    }
    let decoded = percent_decode_str(segment).decode_utf8().ok()?;
    Some(decoded.replace('_', " "))
}

/// Mutable store used while building a snapshot.
///
/// Inserts are last-write-wins per URL. When opened on a file, every insert is
/// also appended to that file, and replaying the file reproduces the store.
#[derive(Debug, Default)]
pub struct DocumentStore {
    docs: IndexMap<String, Document>,
    log: Option<BufWriter<File>>,
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) an append-log file and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let mut store = if path.exists() {
            let mut store = DocumentStore::new();
            for doc in read_snapshot(path)? {
                store.docs.insert(doc.url.clone(), doc);
            }
            store
        } else {
            DocumentStore::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        store.log = Some(BufWriter::new(file));
        Ok(store)
    }

    pub fn insert(&mut self, doc: Document) -> Result<(), CorpusError> {
        if let Some(log) = self.log.as_mut() {
            write_record(log, &doc)?;
        }
        self.docs.insert(doc.url.clone(), doc);
        Ok(())
    }

    pub fn lookup_by_url(&self, url: &str) -> Option<&Document> {
        self.docs.get(url)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Flushes the log and returns the immutable, shareable corpus.
    pub fn freeze(mut self) -> Result<Corpus, CorpusError> {
        if let Some(log) = self.log.as_mut() {
            log.flush()?;
        }
        Ok(Corpus::from_map(self.docs))
    }
}

/// Frozen document collection. Cheap to clone and safe to share.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    inner: Arc<CorpusInner>,
}

#[derive(Debug, Default)]
struct CorpusInner {
    docs: IndexMap<String, Document>,
    wiki_titles: HashMap<String, usize>,
}

impl Corpus {
    fn from_map(docs: IndexMap<String, Document>) -> Self {
        let wiki_titles = docs
            .values()
            .enumerate()
            .filter_map(|(i, d)| {
                let title = extract_wikipedia_title(&d.url)
                    .or_else(|| (d.source == Source::Wikipedia).then(|| d.title.clone()))?;
                Some((title.to_lowercase(), i))
            })
            .collect();
        Corpus {
            inner: Arc::new(CorpusInner { docs, wiki_titles }),
        }
    }

    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Self {
        let mut map = IndexMap::new();
        for d in docs {
            map.insert(d.url.clone(), d);
        }
        Corpus::from_map(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Ok(Corpus::from_documents(read_snapshot(path.as_ref())?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let mut out = BufWriter::new(File::create(path)?);
        for doc in self.iter() {
            write_record(&mut out, doc)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn lookup_by_url(&self, url: &str) -> Option<&Document> {
        self.inner.docs.get(url)
    }

    /// Case-insensitive lookup of a Wikipedia article by title.
    pub fn lookup_wikipedia_title(&self, title: &str) -> Option<&Document> {
        let idx = *self.inner.wiki_titles.get(&title.to_lowercase())?;
        self.inner.docs.get_index(idx).map(|(_, d)| d)
    }

    /// Documents in first-insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.inner.docs.values()
    }

    pub fn len(&self) -> usize {
        self.inner.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.docs.is_empty()
    }

    pub fn chunks(&self, chunk_size: usize) -> Vec<Chunk> {
        self.iter()
            .flat_map(|d| chunk_document(d, chunk_size))
            .collect()
    }
}

fn write_record(out: &mut impl Write, doc: &Document) -> Result<(), CorpusError> {
    serde_json::to_writer(&mut *out, doc).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn read_snapshot(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Path of the fixture corpus bundled with this crate.
pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}
