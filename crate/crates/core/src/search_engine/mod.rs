//! Black-box search: a query goes in, ranked documents come out.
//!
//! Two engines implement [`SearchEngine`]: the offline [`Bm25Engine`] over a
//! local corpus and the [`RemoteSearchClient`] for a live web-search API.
//! [`search`] and [`dual_news_search`] add query validation and URL
//! deduplication on top of any engine.

mod bm25;
mod remote;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

pub use bm25::{bm25_score, Bm25Engine, Bm25Params, Granularity, TermStats, IDF_FLOOR};
pub use remote::{
    BingAdapter, CachedResponse, HttpResponse, HttpTransport, RemoteConfig, RemoteSearchClient,
    ReqwestTransport, ResponseAdapter, ResponseCache, API_KEY_ENV,
};

pub const DEFAULT_N: usize = 5;

/// Number of news results placed ahead of the plain results.
pub const NEWS_SLOTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("search query is empty")]
    EmptyQuery,
    #[error("search engine unavailable: {0}")]
    EngineUnavailable(String),
    #[error("search quota exceeded")]
    QuotaExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub text: String,
    #[serde(default)]
    pub augment_news: bool,
}

impl SearchQuery {
    pub fn new(text: impl Into<String>) -> Self {
        SearchQuery {
            text: text.into(),
            augment_news: false,
        }
    }

    pub fn with_news(mut self, augment_news: bool) -> Self {
        self.augment_news = augment_news;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResults {
    pub query: SearchQuery,
    pub results: Vec<Document>,
    pub engine_id: String,
}

impl SearchResults {
    pub fn urls(&self) -> Vec<&str> {
        self.results.iter().map(Document::url).collect()
    }
}

pub trait SearchEngine: Send + Sync {
    fn id(&self) -> &str;

    /// Up to `n` documents for `query`, best first. `query` is already
    /// trimmed and non-empty.
    fn retrieve(&self, query: &str, n: usize) -> Result<Vec<Document>, SearchError>;
}

impl<E: SearchEngine + ?Sized> SearchEngine for std::sync::Arc<E> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn retrieve(&self, query: &str, n: usize) -> Result<Vec<Document>, SearchError> {
        (**self).retrieve(query, n)
    }
}

/// Plain search. Ignores `augment_news`; see [`dual_news_search`].
pub fn search(
    engine: &dyn SearchEngine,
    query: &SearchQuery,
    n: usize,
) -> Result<SearchResults, SearchError> {
    let text = query.text.trim();
    if text.is_empty() {
        return Err(SearchError::EmptyQuery);
    }
    let docs = engine.retrieve(text, n.max(1))?;
    Ok(SearchResults {
        query: query.clone(),
        results: dedup_truncate(docs, n.max(1)),
        engine_id: engine.id().to_owned(),
    })
}

/// Runs the query twice, once with `" news"` appended, and lists the top two
/// news hits ahead of the plain hits.
pub fn dual_news_search(
    engine: &dyn SearchEngine,
    query: &SearchQuery,
    n: usize,
) -> Result<SearchResults, SearchError> {
    if !query.augment_news {
        return search(engine, query, n);
    }
    let text = query.text.trim();
    if text.is_empty() {
        return Err(SearchError::EmptyQuery);
    }
    let n = n.max(1);
    let news = engine.retrieve(&format!("{text} news"), n)?;
    let plain = engine.retrieve(text, n)?;
    let merged = news.into_iter().take(NEWS_SLOTS).chain(plain);
    Ok(SearchResults {
        query: query.clone(),
        results: dedup_truncate(merged, n),
        engine_id: engine.id().to_owned(),
    })
}

fn dedup_truncate(docs: impl IntoIterator<Item = Document>, n: usize) -> Vec<Document> {
    let mut seen = HashSet::new();
    docs.into_iter()
        .filter(|d| seen.insert(d.url().to_owned()))
        .take(n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;

    /// Returns canned url lists per exact query string.
    struct Canned(Vec<(&'static str, Vec<&'static str>)>);

    impl SearchEngine for Canned {
        fn id(&self) -> &str {
            "canned"
        }

        fn retrieve(&self, query: &str, n: usize) -> Result<Vec<Document>, SearchError> {
            let urls = self
                .0
                .iter()
                .find(|(q, _)| *q == query)
                .map(|(_, u)| u.clone())
                .unwrap_or_default();
            Ok(urls
                .into_iter()
                .take(n)
                .map(|u| {
                    Document::new(format!("https://x.com/{u}"), u, u, Source::CommonCrawl).unwrap()
                })
                .collect())
        }
    }

    fn names(r: &SearchResults) -> Vec<String> {
        r.results.iter().map(|d| d.title().to_owned()).collect()
    }

    #[test]
    fn news_merge_rule() {
        let engine = Canned(vec![
            ("tennis news", vec!["A", "B", "C"]),
            ("tennis", vec!["B", "D", "E"]),
        ]);
        let q = SearchQuery::new("tennis").with_news(true);
        // top two news (A, B), then plain (B dup, D, E), truncated to 4
        assert_eq!(
            names(&dual_news_search(&engine, &q, 4).unwrap()),
            ["A", "B", "D", "E"]
        );
        assert_eq!(
            names(&dual_news_search(&engine, &q, 3).unwrap()),
            ["A", "B", "D"]
        );

        let engine = Canned(vec![
            ("tennis news", vec!["A", "B", "C"]),
            ("tennis", vec!["B", "D"]),
        ]);
        assert_eq!(
            names(&dual_news_search(&engine, &q, 4).unwrap()),
            ["A", "B", "D"]
        );

        let engine = Canned(vec![("tennis news", vec!["A"])]);
        assert_eq!(names(&dual_news_search(&engine, &q, 5).unwrap()), ["A"]);
    }

    #[test]
    fn news_disabled_is_plain() {
        let engine = Canned(vec![("tennis news", vec!["A"]), ("tennis", vec!["B", "D"])]);
        let q = SearchQuery::new("tennis");
        assert_eq!(
            dual_news_search(&engine, &q, 5).unwrap(),
            search(&engine, &q, 5).unwrap()
        );
    }

    #[test]
    fn empty_query_rejected() {
        let engine = Canned(vec![]);
        assert_eq!(
            search(&engine, &SearchQuery::new(""), 5),
            Err(SearchError::EmptyQuery)
        );
        assert_eq!(
            dual_news_search(&engine, &SearchQuery::new("  ").with_news(true), 5),
            Err(SearchError::EmptyQuery)
        );
    }

    #[test]
    fn duplicates_removed() {
        let engine = Canned(vec![("q", vec!["A", "A", "B"])]);
        assert_eq!(
            names(&search(&engine, &SearchQuery::new("q"), 5).unwrap()),
            ["A", "B"]
        );
    }
}
