//! Client for a live web-search API.
//!
//! The API returns a ranked list of (url, title). Page content is looked up in
//! the local snapshot by URL, then by Wikipedia title, and otherwise left
//! empty with `source = live`. Responses are cached per `(query, n)` in a JSONL
//! file so repeated evaluation runs do not hit the network.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};
use url::Url;

use crate::corpus::{extract_wikipedia_title, Corpus, Document, Source};

use super::{SearchEngine, SearchError};

pub const API_KEY_ENV: &str = "SEA_SEARCH_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Minimal blocking HTTP, so tests can replay canned responses.
pub trait HttpTransport: Send + Sync {
    fn get(&self, url: &Url, headers: &[(String, String)]) -> Result<HttpResponse, String>;

    fn post_json(&self, url: &Url, body: &str) -> Result<HttpResponse, String> {
        let _ = (url, body);
        Err("POST is not supported by this transport".to_owned())
    }
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(ReqwestTransport { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn get(&self, url: &Url, headers: &[(String, String)]) -> Result<HttpResponse, String> {
        let mut req = self.client.get(url.as_str());
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }

    fn post_json(&self, url: &Url, body: &str) -> Result<HttpResponse, String> {
        let resp = self
            .client
            .post(url.as_str())
            .header("Content-Type", "application/json")
            .body(body.to_owned())
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

/// Translates between the client and one engine's wire format.
pub trait ResponseAdapter: Send + Sync {
    fn request_url(&self, endpoint: &Url, query: &str, n: usize) -> Url;
    fn headers(&self, api_key: &str) -> Vec<(String, String)>;
    fn parse(&self, body: &str) -> Result<Vec<(String, String)>, String>;
}

/// `{"webPages":{"value":[{"url":...,"name":...}]}}`
#[derive(Debug, Default, Clone, Copy)]
pub struct BingAdapter;

#[derive(Deserialize)]
struct BingBody {
    #[serde(rename = "webPages")]
    web_pages: Option<BingPages>,
}

#[derive(Deserialize)]
struct BingPages {
    #[serde(default)]
    value: Vec<BingHit>,
}

#[derive(Deserialize)]
struct BingHit {
    url: String,
    #[serde(default)]
    name: String,
}

impl ResponseAdapter for BingAdapter {
    fn request_url(&self, endpoint: &Url, query: &str, n: usize) -> Url {
        let mut url = endpoint.clone();
        url.query_pairs_mut()
            .append_pair("q", query)
            .append_pair("count", &n.to_string());
        url
    }

    fn headers(&self, api_key: &str) -> Vec<(String, String)> {
        vec![("Ocp-Apim-Subscription-Key".to_owned(), api_key.to_owned())]
    }

    fn parse(&self, body: &str) -> Result<Vec<(String, String)>, String> {
        let parsed: BingBody = serde_json::from_str(body).map_err(|e| e.to_string())?;
        Ok(parsed
            .web_pages
            .map(|p| p.value.into_iter().map(|h| (h.url, h.name)).collect())
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub query: String,
    pub n: usize,
    pub urls: Vec<String>,
    pub titles: Vec<String>,
    pub fetched_at: u64,
}

/// Append-only JSONL response cache keyed by `(query, n)`.
#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<(String, usize), CachedResponse>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            path: None,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                match serde_json::from_str::<CachedResponse>(&line) {
                    Ok(entry) => {
                        entries.insert((entry.query.clone(), entry.n), entry);
                    }
                    Err(e) => warn!("skipping corrupt cache line: {e}"),
                }
            }
        }
        Ok(ResponseCache {
            path: Some(path),
            entries: Mutex::new(entries),
        })
    }

    pub fn get(&self, query: &str, n: usize) -> Option<CachedResponse> {
        self.entries
            .lock()
            .unwrap()
            .get(&(query.to_owned(), n))
            .cloned()
    }

    pub fn put(&self, entry: CachedResponse) -> std::io::Result<()> {
        let mut entries = self.entries.lock().unwrap();
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
        }
        entries.insert((entry.query.clone(), entry.n), entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: Url,
    pub api_key: String,
    pub timeout: Duration,
    /// Minimum spacing between requests to the same host.
    pub min_interval: Duration,
    pub cache_path: Option<PathBuf>,
}

impl RemoteConfig {
    /// Reads the API key from `SEA_SEARCH_API_KEY`.
    pub fn from_env(endpoint: Url) -> Result<Self, SearchError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| SearchError::EngineUnavailable(format!("{API_KEY_ENV} is not set")))?;
        Ok(RemoteConfig {
            endpoint,
            api_key,
            timeout: Duration::from_secs(10),
            min_interval: Duration::from_millis(100),
            cache_path: None,
        })
    }
}

pub struct RemoteSearchClient {
    id: String,
    config: RemoteConfig,
    transport: Box<dyn HttpTransport>,
    adapter: Box<dyn ResponseAdapter>,
    snapshot: Option<Corpus>,
    wikipedia: Option<Corpus>,
    cache: ResponseCache,
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl RemoteSearchClient {
    pub fn new(config: RemoteConfig, transport: Box<dyn HttpTransport>) -> std::io::Result<Self> {
        let cache = match &config.cache_path {
            Some(p) => ResponseCache::open(p)?,
            None => ResponseCache::in_memory(),
        };
        Ok(RemoteSearchClient {
            id: "remote".to_owned(),
            config,
            transport,
            adapter: Box::new(BingAdapter),
            snapshot: None,
            wikipedia: None,
            cache,
            next_slot: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_adapter(mut self, adapter: Box<dyn ResponseAdapter>) -> Self {
        self.adapter = adapter;
        self
    }

    /// Snapshot used to resolve URLs to page content.
    pub fn with_snapshot(mut self, corpus: Corpus) -> Self {
        self.snapshot = Some(corpus);
        self
    }

    /// Wikipedia dump used to resolve article URLs by title.
    pub fn with_wikipedia(mut self, corpus: Corpus) -> Self {
        self.wikipedia = Some(corpus);
        self
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    fn wait_for_slot(&self, host: &str) {
        let wait = {
            let mut slots = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let slot = slots.get(host).copied().unwrap_or(now).max(now);
            slots.insert(host.to_owned(), slot + self.config.min_interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn fetch(&self, query: &str, n: usize) -> Result<Vec<(String, String)>, SearchError> {
        if let Some(hit) = self.cache.get(query, n) {
            debug!(query, n, "search cache hit");
            return Ok(hit.urls.into_iter().zip(hit.titles).collect());
        }
        let url = self.adapter.request_url(&self.config.endpoint, query, n);
        self.wait_for_slot(url.host_str().unwrap_or_default());
        let headers = self.adapter.headers(&self.config.api_key);
        let resp = self
            .transport
            .get(&url, &headers)
            .map_err(SearchError::EngineUnavailable)?;
        match resp.status {
            200..=299 => {}
            429 => return Err(SearchError::QuotaExceeded),
            status => {
                return Err(SearchError::EngineUnavailable(format!("HTTP {status}")));
            }
        }
        let hits = self
            .adapter
            .parse(&resp.body)
            .map_err(|e| SearchError::EngineUnavailable(format!("bad response: {e}")))?;
        let fetched_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let (urls, titles) = hits.iter().cloned().unzip();
        if let Err(e) = self.cache.put(CachedResponse {
            query: query.to_owned(),
            n,
            urls,
            titles,
            fetched_at,
        }) {
            warn!("failed to write search cache: {e}");
        }
        Ok(hits)
    }

    fn resolve(&self, url: &str, title: &str) -> Option<Document> {
        if let Some(doc) = self.snapshot.as_ref().and_then(|s| s.lookup_by_url(url)) {
            return Some(doc.clone());
        }
        if let Some(wiki) = &self.wikipedia {
            if let Some(doc) =
                extract_wikipedia_title(url).and_then(|t| wiki.lookup_wikipedia_title(&t))
            {
                return Document::new(url, doc.title(), doc.content(), Source::Wikipedia).ok();
            }
        }
        Document::live_placeholder(url, title).ok()
    }
}

impl SearchEngine for RemoteSearchClient {
    fn id(&self) -> &str {
        &self.id
    }

    fn retrieve(&self, query: &str, n: usize) -> Result<Vec<Document>, SearchError> {
        let hits = self.fetch(query, n)?;
        Ok(hits
            .iter()
            .take(n)
            .filter_map(|(url, title)| {
                let doc = self.resolve(url, title);
                if doc.is_none() {
                    warn!(url, "dropping unparseable result url");
                }
                doc
            })
            .collect())
    }
}
