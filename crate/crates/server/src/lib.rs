//! HTTP JSON API behind the collection and evaluation workbench.
//!
//! Requests for one session are serialized by a per-session lock; distinct
//! sessions proceed concurrently. Every accepted mutation is appended to the
//! session log, and shutdown appends a final snapshot of each session.

mod error;
pub mod session;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::future::Future;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;
use tokio::sync::Mutex as AsyncMutex;

use sea_core::orchestrator::Pipeline;
use sea_core::query_gen::Speaker;
use sea_core::search_engine::{
    dual_news_search, SearchEngine, SearchError, SearchQuery, DEFAULT_N,
};
use sea_core::training_data::TurnAnnotation;

pub use error::ApiError;
pub use session::{aggregate, Aggregate, Role, SearchView, Session};

/// Persona seeds in the "My character's favorite ..." style.
pub const DEFAULT_PERSONAS: &[&str] = &[
    "My favorite sport is tennis.",
    "My favorite TV show is The Big Bang Theory.",
    "I like James Bond movies.",
    "My favorite hobby is hiking in national parks.",
    "I am learning to play the guitar.",
    "My favorite dog breed is the golden retriever.",
    "My favorite food is Neapolitan pizza.",
    "I love watching solar eclipses.",
    "I want to buy an electric car.",
];

pub const DEFAULT_TURN_LIMIT: usize = 15;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Append-only JSONL event log.
pub struct SessionLog {
    out: Option<Mutex<BufWriter<File>>>,
}

impl SessionLog {
    pub fn disabled() -> Self {
        SessionLog { out: None }
    }

    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(SessionLog {
            out: Some(Mutex::new(BufWriter::new(f))),
        })
    }

    pub fn append(&self, session: &str, event: &str, data: serde_json::Value) {
        let Some(out) = &self.out else { return };
        let line = json!({"session": session, "event": event, "data": data});
        let mut w = out.lock().unwrap();
        let res = serde_json::to_writer(&mut *w, &line)
            .map_err(std::io::Error::from)
            .and_then(|_| w.write_all(b"\n"))
            .and_then(|_| w.flush());
        if let Err(e) = res {
            tracing::error!("session log write failed: {e}");
        }
    }
}

pub struct ServerConfig {
    pub turn_limit: usize,
    pub n_results: usize,
    pub personas: Vec<String>,
    pub persona_choices: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            turn_limit: DEFAULT_TURN_LIMIT,
            n_results: DEFAULT_N,
            personas: DEFAULT_PERSONAS.iter().map(|s| (*s).to_owned()).collect(),
            persona_choices: 3,
        }
    }
}

pub struct AppState {
    config: ServerConfig,
    engine: Arc<dyn SearchEngine>,
    /// Generates bot turns in eval sessions.
    bot: Option<Arc<Pipeline>>,
    sessions: RwLock<HashMap<String, Arc<AsyncMutex<Session>>>>,
    log: SessionLog,
    created: AtomicUsize,
}

impl AppState {
    pub fn new(
        config: ServerConfig,
        engine: Arc<dyn SearchEngine>,
        bot: Option<Arc<Pipeline>>,
        log: SessionLog,
    ) -> Self {
        AppState {
            config,
            engine,
            bot,
            sessions: RwLock::new(HashMap::new()),
            log,
            created: AtomicUsize::new(0),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<AsyncMutex<Session>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("no_such_session", format!("unknown session {id}")))
    }

    fn all_sessions(&self) -> Vec<Arc<AsyncMutex<Session>>> {
        let map = self.sessions.read().unwrap();
        let mut ids: Vec<&String> = map.keys().collect();
        ids.sort();
        ids.into_iter().map(|id| map[id].clone()).collect()
    }

    /// Appends a snapshot of every session to the log.
    pub async fn flush_sessions(&self) {
        for s in self.all_sessions() {
            let s = s.lock().await;
            self.log.append(&s.id, "snapshot", json!(s.to_dialogue()));
        }
    }
}

type Shared = Arc<AppState>;
type Body<T> = Result<Json<T>, JsonRejection>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}", get(get_session))
        .route("/api/session/{id}/persona", post(set_persona))
        .route("/api/session/{id}/search", post(search))
        .route("/api/session/{id}/select", post(select))
        .route("/api/session/{id}/message", post(message))
        .route("/api/session/{id}/annotate", post(annotate))
        .route("/api/session/{id}/final_rating", post(final_rating))
        .route("/api/session/{id}/export", get(export))
        .route("/api/aggregate", get(aggregate_handler))
        .with_state(state)
}

/// Binds and serves until `shutdown` resolves, then snapshots every session.
pub async fn serve(
    state: Shared,
    addr: SocketAddr,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::BindFailure { addr, source })?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    state.flush_sessions().await;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    role: Role,
    #[serde(default)]
    turn_limit: Option<usize>,
}

async fn create_session(
    State(st): State<Shared>,
    body: Body<CreateBody>,
) -> Result<Response, ApiError> {
    let Json(body) = body?;
    let n = st.created.fetch_add(1, Ordering::Relaxed);
    let pool = &st.config.personas;
    let options: Vec<String> = (0..st.config.persona_choices.min(pool.len()))
        .map(|i| pool[(n * st.config.persona_choices + i) % pool.len()].clone())
        .collect();
    let id = uuid::Uuid::new_v4().to_string();
    let limit = body.turn_limit.unwrap_or(st.config.turn_limit);
    if limit < 2 {
        return Err(ApiError::bad_request(
            "bad_turn_limit",
            "turn_limit must be at least 2",
        ));
    }
    let session = Session::new(id.clone(), body.role, options.clone(), limit);
    st.log.append(
        &id,
        "create",
        json!({"role": body.role, "persona_options": options}),
    );
    st.sessions
        .write()
        .unwrap()
        .insert(id.clone(), Arc::new(AsyncMutex::new(session)));
    let out = json!({"id": id, "role": body.role, "persona_options": options, "turn_limit": limit});
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

async fn get_session(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Session>, ApiError> {
    let s = st.session(&id)?;
    let s = s.lock().await;
    Ok(Json(s.clone()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonaBody {
    persona: String,
    #[serde(default)]
    refinement: Option<String>,
}

async fn set_persona(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Body<PersonaBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(body) = body?;
    let s = st.session(&id)?;
    let mut s = s.lock().await;
    s.set_persona(&body.persona, body.refinement.as_deref())?;
    st.log.append(&id, "persona", json!(s.persona));
    Ok(Json(json!({"persona": s.persona})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchBody {
    query: String,
    #[serde(default)]
    augment_news: bool,
}

fn search_error(e: SearchError) -> ApiError {
    match e {
        SearchError::EmptyQuery => ApiError::bad_request("empty_query", "query must be non-empty"),
        SearchError::QuotaExceeded => ApiError::new(
            StatusCode::TOO_MANY_REQUESTS,
            "quota_exceeded",
            e.to_string(),
        ),
        SearchError::EngineUnavailable(_) => ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "engine_unavailable",
            e.to_string(),
        ),
    }
}

async fn search(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Body<SearchBody>,
) -> Result<Json<SearchView>, ApiError> {
    let Json(body) = body?;
    let s = st.session(&id)?;
    let mut s = s.lock().await;
    s.check_wizard()?;
    let engine = st.engine.clone();
    let n = st.config.n_results;
    let query = SearchQuery::new(body.query).with_news(body.augment_news);
    let results = tokio::task::spawn_blocking(move || dual_news_search(engine.as_ref(), &query, n))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(search_error)?;
    s.record_search(&results);
    let view = SearchView::from_results(&results);
    st.log.append(
        &id,
        "search",
        json!({"query": view.query, "urls": results.urls()}),
    );
    Ok(Json(view))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectBody {
    doc_url: String,
    sentence: String,
}

async fn select(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Body<SelectBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(body) = body?;
    let s = st.session(&id)?;
    let mut s = s.lock().await;
    s.select(&body.doc_url, &body.sentence)?;
    st.log.append(
        &id,
        "select",
        json!({"doc_url": body.doc_url, "sentence": body.sentence}),
    );
    Ok(Json(json!({"selected": s.pending_selected})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageBody {
    text: String,
    #[serde(default)]
    speaker: Option<Speaker>,
}

async fn message(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Body<MessageBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(body) = body?;
    let s = st.session(&id)?;
    let mut s = s.lock().await;
    let speaker = match (s.role, body.speaker) {
        (Role::Eval, Some(Speaker::Wizard)) => {
            return Err(ApiError::bad_request(
                "wrong_speaker",
                "the bot speaks for the wizard in eval sessions",
            ));
        }
        (Role::Eval, _) => Speaker::Apprentice,
        (Role::Wizard, sp) => sp.unwrap_or(Speaker::Wizard),
    };
    let index = s.add_message(speaker, &body.text)?;
    st.log.append(&id, "message", json!(s.turns[index]));
    let mut reply = None;
    if s.role == Role::Eval && !s.at_limit() {
        let bot = st.bot.clone().ok_or_else(|| {
            ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "no_bot",
                "no bot is configured",
            )
        })?;
        let ctx = s.to_dialogue().context_before(s.turns.len());
        let text = tokio::task::spawn_blocking(move || bot.run_wizard_turn(&ctx))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
            .map_err(|e| ApiError::internal(e.to_string()))?
            .0;
        let i = s.add_bot_turn(text)?;
        st.log.append(&id, "bot", json!(s.turns[i]));
        reply = Some(json!({"turn_index": i, "text": s.turns[i].text}));
    }
    Ok(Json(json!({
        "turn_index": index,
        "reply": reply,
        "turns": s.turns.len(),
        "at_limit": s.at_limit(),
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotateBody {
    turn_index: usize,
    consistent: bool,
    engaging: bool,
    knowledgeable: bool,
    factually_incorrect: bool,
}

async fn annotate(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Body<AnnotateBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(b) = body?;
    let s = st.session(&id)?;
    let mut s = s.lock().await;
    let a = TurnAnnotation {
        consistent: b.consistent,
        engaging: b.engaging,
        knowledgeable: b.knowledgeable,
        factually_incorrect: b.factually_incorrect,
    };
    s.annotate(b.turn_index, a)?;
    st.log.append(
        &id,
        "annotate",
        json!({"turn_index": b.turn_index, "annotation": a}),
    );
    Ok(Json(json!({"turn_index": b.turn_index, "annotation": a})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RatingBody {
    rating: u8,
}

async fn final_rating(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Body<RatingBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(b) = body?;
    let s = st.session(&id)?;
    let mut s = s.lock().await;
    s.set_rating(b.rating)?;
    st.log.append(&id, "final_rating", json!(b.rating));
    Ok(Json(json!({"rating": b.rating})))
}

async fn export(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let s = st.session(&id)?;
    let s = s.lock().await;
    match s.export() {
        Ok(line) => Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], line).into_response()),
        Err(v) => Err(ApiError::unprocessable(
            "schema_violation",
            v.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        )),
    }
}

async fn aggregate_handler(State(st): State<Shared>) -> Json<Aggregate> {
    let mut sessions = Vec::new();
    for s in st.all_sessions() {
        sessions.push(s.lock().await.clone());
    }
    Json(aggregate(&sessions))
}
