use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use sea_core::corpus::{fixture_path, Corpus, Document};
use sea_core::fusion_decode::{train_ngram_lm, CacheMixLm, GenerationParams};
use sea_core::orchestrator::{Pipeline, PipelineConfig, RetrievalMode, ZeroClock};
use sea_core::query_gen::ExtractiveQueryGenerator;
use sea_core::search_engine::{Bm25Engine, SearchEngine, SearchError};
use sea_core::training_data::{compute_stats, parse_dataset};
use sea_server::{router, AppState, ServerConfig, SessionLog};

fn app_with(engine: Arc<dyn SearchEngine>, log: SessionLog) -> (Router, Arc<AppState>) {
    let corpus = Corpus::load(fixture_path("corpus.jsonl")).unwrap();
    let texts: Vec<String> = corpus.iter().map(|d| d.content().to_owned()).collect();
    let lm = Arc::new(CacheMixLm::new(
        Arc::new(train_ngram_lm(&texts, 3, 0.1).unwrap()),
        0.3,
    ));
    let bot = Pipeline::new(
        PipelineConfig {
            retrieval_mode: RetrievalMode::Engine,
            generation: GenerationParams {
                min_len: 5,
                max_len: 12,
                ..Default::default()
            },
            ..Default::default()
        },
        lm,
    )
    .with_query_generator(Arc::new(ExtractiveQueryGenerator::from_corpus(&corpus, 3)))
    .with_engine(Arc::new(Bm25Engine::with_default_params(&corpus)))
    .with_clock(Arc::new(ZeroClock));
    let state = Arc::new(AppState::new(
        ServerConfig::default(),
        engine,
        Some(Arc::new(bot)),
        log,
    ));
    (router(state.clone()), state)
}

fn app() -> Router {
    let corpus = Corpus::load(fixture_path("corpus.jsonl")).unwrap();
    app_with(
        Arc::new(Bm25Engine::with_default_params(&corpus)),
        SessionLog::disabled(),
    )
    .0
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value, String) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let json = serde_json::from_str(&text).unwrap_or(Value::Null);
    (status, json, text)
}

async fn create(app: &Router, role: &str) -> String {
    let (status, v, _) = call(app, "POST", "/api/session", Some(json!({"role": role}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["persona_options"].as_array().unwrap().len(), 3);
    v["id"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn scripted_wizard_session_exports_valid_jsonl() {
    let app = app();
    let id = create(&app, "wizard").await;
    let base = format!("/api/session/{id}");
    let (s, _, _) = call(
        &app,
        "POST",
        &format!("{base}/persona"),
        Some(json!({"persona": "My favorite sport is tennis.", "refinement": "I love Rafael Nadal."})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);

    call(
        &app,
        "POST",
        &format!("{base}/message"),
        Some(json!({"text": "Hi, do you like tennis?", "speaker": "apprentice"})),
    )
    .await;
    let (s, r1, _) = call(
        &app,
        "POST",
        &format!("{base}/search"),
        Some(json!({"query": "tennis"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let results = r1["results"].as_array().unwrap();
    assert!(!results.is_empty() && results.len() <= 5);
    let (_, r2, _) = call(
        &app,
        "POST",
        &format!("{base}/search"),
        Some(json!({"query": "rafael nadal clay", "augment_news": true})),
    )
    .await;
    let picks = [
        (&r1["results"][0], 0),
        (&r2["results"][0], 0),
        (&r2["results"][0], 1),
    ];
    for (doc, i) in picks {
        let (s, _, body) = call(
            &app,
            "POST",
            &format!("{base}/select"),
            Some(json!({"doc_url": doc["url"], "sentence": doc["sentences"][i]})),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{body}");
    }
    let (s, err, _) = call(
        &app,
        "POST",
        &format!("{base}/select"),
        Some(json!({"doc_url": "https://nowhere.com/", "sentence": "x"})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "invalid_selection");

    let script = [
        ("wizard", "Yes! Nadal is the King of Clay."),
        ("apprentice", "He is my favorite."),
        ("wizard", "He has won many French Open titles."),
        ("apprentice", "Amazing."),
        ("wizard", "Do you play tennis yourself?"),
    ];
    for (speaker, text) in script {
        let (s, _, _) = call(
            &app,
            "POST",
            &format!("{base}/message"),
            Some(json!({"text": text, "speaker": speaker})),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
    }
    let (s, _, line) = call(&app, "GET", &format!("{base}/export"), None).await;
    assert_eq!(s, StatusCode::OK);
    let data = parse_dataset(&line).unwrap();
    let stats = compute_stats(&data);
    assert_eq!(stats.utterances, 6);
    assert_eq!(stats.searches, 2);
    assert_eq!(data[0].turns[1].selected.len(), 3);
    assert_eq!(data[0].apprentice_persona.len(), 2);
}

#[tokio::test]
async fn eval_session_flow_and_aggregate() {
    let app = app();
    let mut expected_engaging = 0;
    let mut ratings = 0;
    for k in 0..5usize {
        let id = create(&app, "eval").await;
        let base = format!("/api/session/{id}");
        call(
            &app,
            "POST",
            &format!("{base}/persona"),
            Some(json!({"persona": "I like James Bond movies."})),
        )
        .await;
        let mut bot_turns = 0;
        loop {
            let (s, v, body) = call(
                &app,
                "POST",
                &format!("{base}/message"),
                Some(json!({"text": "tell me about the vesper cocktail"})),
            )
            .await;
            assert_eq!(s, StatusCode::OK, "{body}");
            if v["reply"].is_null() {
                assert!(v["at_limit"].as_bool().unwrap());
                break;
            }
            let idx = v["reply"]["turn_index"].as_u64().unwrap();
            // a second message before annotating is refused
            let (s, e, _) = call(
                &app,
                "POST",
                &format!("{base}/message"),
                Some(json!({"text": "again"})),
            )
            .await;
            assert_eq!(s, StatusCode::CONFLICT);
            assert_eq!(e["code"], "annotation_required");
            let engaging = (k + bot_turns) % 2 == 0;
            expected_engaging += usize::from(engaging);
            bot_turns += 1;
            let (s, _, _) = call(
                &app,
                "POST",
                &format!("{base}/annotate"),
                Some(json!({"turn_index": idx, "consistent": true, "engaging": engaging, "knowledgeable": false, "factually_incorrect": false})),
            )
            .await;
            assert_eq!(s, StatusCode::OK);
            if v["at_limit"].as_bool().unwrap() {
                break;
            }
        }
        assert_eq!(bot_turns, 7);
        let (_, sess, _) = call(&app, "GET", &base, None).await;
        assert_eq!(sess["turns"].as_array().unwrap().len(), 15);
        let (s, _, _) = call(
            &app,
            "POST",
            &format!("{base}/final_rating"),
            Some(json!({"rating": 6})),
        )
        .await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        let rating = 1 + k as u8;
        ratings += rating as usize;
        call(
            &app,
            "POST",
            &format!("{base}/final_rating"),
            Some(json!({"rating": rating})),
        )
        .await;
        let (s, _, line) = call(&app, "GET", &format!("{base}/export"), None).await;
        assert_eq!(s, StatusCode::OK);
        assert!(parse_dataset(&line).is_ok());
    }
    let (_, agg, _) = call(&app, "GET", "/api/aggregate", None).await;
    assert_eq!(agg["sessions"], 5);
    assert_eq!(agg["annotated_turns"], 35);
    assert_eq!(agg["consistent_pct"], 100.0);
    assert_eq!(
        agg["engaging_pct"].as_f64().unwrap(),
        100.0 * expected_engaging as f64 / 35.0
    );
    assert_eq!(agg["mean_rating"].as_f64().unwrap(), ratings as f64 / 5.0);
}

#[tokio::test]
async fn errors_have_code_and_message() {
    let app = app();
    let (s, v, _) = call(&app, "GET", "/api/session/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "no_such_session");
    assert!(v["message"].is_string());
    let (s, v, _) = call(&app, "POST", "/api/session", Some(json!({"role": "boss"}))).await;
    assert!(s.is_client_error());
    assert_eq!(v["code"], "bad_json");
    let id = create(&app, "wizard").await;
    let (s, v, _) = call(
        &app,
        "POST",
        &format!("/api/session/{id}/search"),
        Some(json!({"query": "  "})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "empty_query");
    let (s, v, _) = call(&app, "GET", &format!("/api/session/{id}/export"), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "schema_violation");
}

struct Down;

impl SearchEngine for Down {
    fn id(&self) -> &str {
        "down"
    }

    fn retrieve(&self, _: &str, _: usize) -> Result<Vec<Document>, SearchError> {
        Err(SearchError::EngineUnavailable("offline".into()))
    }
}

#[tokio::test]
async fn engine_failure_leaves_session_usable_and_log_records_events() {
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("sessions.jsonl");
    let (app, state) = app_with(Arc::new(Down), SessionLog::open(&log_path).unwrap());
    let id = create(&app, "wizard").await;
    let (s, v, _) = call(
        &app,
        "POST",
        &format!("/api/session/{id}/search"),
        Some(json!({"query": "tennis"})),
    )
    .await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["code"], "engine_unavailable");
    let (s, _, _) = call(
        &app,
        "POST",
        &format!("/api/session/{id}/message"),
        Some(json!({"text": "hello"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    state.flush_sessions().await;
    let log = std::fs::read_to_string(&log_path).unwrap();
    let events: Vec<String> = log
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["event"]
                .as_str()
                .unwrap()
                .to_owned()
        })
        .collect();
    assert_eq!(events, vec!["create", "message", "snapshot"]);
}

#[tokio::test]
async fn serve_binds_and_shuts_down() {
    let corpus = Corpus::load(fixture_path("corpus.jsonl")).unwrap();
    let (_, state) = app_with(
        Arc::new(Bm25Engine::with_default_params(&corpus)),
        SessionLog::disabled(),
    );
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    let err = sea_server::serve(state.clone(), addr, async {})
        .await
        .unwrap_err();
    assert!(matches!(err, sea_server::ServerError::BindFailure { .. }));
    drop(taken);
    sea_server::serve(state, "127.0.0.1:0".parse().unwrap(), async {})
        .await
        .unwrap();
}
