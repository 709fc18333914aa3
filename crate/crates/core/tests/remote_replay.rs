use std::sync::Mutex;
use std::time::Duration;

use sea_core::corpus::{fixture_path, Corpus, Source};
use sea_core::search_engine::{
    dual_news_search, HttpResponse, HttpTransport, RemoteConfig, RemoteSearchClient, SearchEngine,
    SearchError, SearchQuery,
};
use url::Url;

struct Replay {
    status: u16,
    body: String,
    calls: Mutex<usize>,
}

impl HttpTransport for Replay {
    fn get(&self, _url: &Url, _headers: &[(String, String)]) -> Result<HttpResponse, String> {
        *self.calls.lock().unwrap() += 1;
        Ok(HttpResponse {
            status: self.status,
            body: self.body.clone(),
        })
    }
}

fn config() -> RemoteConfig {
    RemoteConfig {
        endpoint: Url::parse("https://api.example.com/v7.0/search").unwrap(),
        api_key: "test".into(),
        timeout: Duration::from_secs(1),
        min_interval: Duration::ZERO,
        cache_path: None,
    }
}

fn client(status: u16) -> RemoteSearchClient {
    let body = std::fs::read_to_string(fixture_path("bing_james_bond_cocktail.json")).unwrap();
    let corpus = Corpus::load(fixture_path("corpus.jsonl")).unwrap();
    RemoteSearchClient::new(
        config(),
        Box::new(Replay {
            status,
            body,
            calls: Mutex::new(0),
        }),
    )
    .unwrap()
    .with_snapshot(corpus.clone())
    .with_wikipedia(corpus)
}

#[test]
fn recorded_response_resolves_content() {
    let c = client(200);
    let docs = c.retrieve("james bond cocktail", 4).unwrap();
    assert_eq!(docs.len(), 4);
    assert_eq!(
        docs[0].url(),
        "https://en.wikipedia.org/wiki/Vesper_(cocktail)"
    );
    assert!(docs[0].content().contains("Ian Fleming"));
    assert!(docs[1].content().contains("shaker"));
    // not in the snapshot: live placeholders
    assert_eq!(docs[3].source(), Source::Live);
    assert!(docs[3].content().is_empty());
    // second call is served from the cache
    assert_eq!(c.retrieve("james bond cocktail", 4).unwrap(), docs);
    assert_eq!(c.cache().len(), 1);
}

#[test]
fn status_codes_map_to_errors() {
    assert_eq!(
        client(429).retrieve("q", 5),
        Err(SearchError::QuotaExceeded)
    );
    assert!(matches!(
        client(503).retrieve("q", 5),
        Err(SearchError::EngineUnavailable(_))
    ));
}

#[test]
fn dual_search_dedups() {
    let c = client(200);
    let r = dual_news_search(
        &c,
        &SearchQuery::new("james bond cocktail").with_news(true),
        4,
    )
    .unwrap();
    assert_eq!(r.results.len(), 4);
    let mut urls = r.urls();
    urls.dedup();
    assert_eq!(urls.len(), 4);
}

#[test]
fn cache_persists_across_clients() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.cache_path = Some(dir.path().join("cache.jsonl"));
    let body = std::fs::read_to_string(fixture_path("bing_james_bond_cocktail.json")).unwrap();
    let first = RemoteSearchClient::new(
        cfg.clone(),
        Box::new(Replay {
            status: 200,
            body,
            calls: Mutex::new(0),
        }),
    )
    .unwrap();
    let a = first.retrieve("james bond cocktail", 3).unwrap();
    // a transport that always fails proves the second client never goes to the network
    let second = RemoteSearchClient::new(
        cfg,
        Box::new(Replay {
            status: 500,
            body: String::new(),
            calls: Mutex::new(0),
        }),
    )
    .unwrap();
    assert_eq!(second.retrieve("james bond cocktail", 3).unwrap(), a);
}
