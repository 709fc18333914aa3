//! End-to-end wizard turns (query → retrieve → assemble → decode) and
//! dataset-wide evaluation.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Chunk, Corpus, Document, Source};
use crate::dense_index::{DenseError, DenseIndex, DenseIndexBuilder, Embedder};
use crate::fusion_decode::{
    assemble_fid_contexts, generate, DecodeError, FiDInput, FidMode, GenerationParams, SourceKind,
    TokenLm, DEFAULT_N_DOCS,
};
use crate::metrics::{
    knowledge_text, target_log_prob, EmptyKnowledge, MetricAccumulator, MetricReport, MetricsError,
};
use crate::query_gen::{DialogueContext, QueryGenerator, Speaker};
use crate::search_engine::{dual_news_search, SearchEngine};
use crate::training_data::{
    extract_response_pairs, mix_regularized, TrainingExample, Turn, WizIntDialogue,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    #[default]
    None,
    DenseContext,
    DenseQuery,
    Engine,
}

impl RetrievalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalMode::None => "none",
            RetrievalMode::DenseContext => "dense_context",
            RetrievalMode::DenseQuery => "dense_query",
            RetrievalMode::Engine => "engine",
        }
    }
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RetrievalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(RetrievalMode::None),
            "dense_context" => Ok(RetrievalMode::DenseContext),
            "dense_query" => Ok(RetrievalMode::DenseQuery),
            "engine" => Ok(RetrievalMode::Engine),
            other => Err(format!(
                "unknown mode {other:?} (expected none, dense_context, dense_query or engine)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub retrieval_mode: RetrievalMode,
    pub engine_id: String,
    /// Ignored when `retrieval_mode` is `none`.
    pub n_docs: usize,
    pub generation: GenerationParams,
    /// Knowledge-task probability; only used when emitting training data.
    pub mix_rho: f64,
    pub augment_news: bool,
    /// Evaluation threads; 0 uses the global pool.
    pub workers: usize,
    pub empty_knowledge: EmptyKnowledge,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            retrieval_mode: RetrievalMode::None,
            engine_id: "bm25".into(),
            n_docs: DEFAULT_N_DOCS,
            generation: GenerationParams::default(),
            mix_rho: 0.0,
            augment_news: false,
            workers: 0,
            empty_knowledge: EmptyKnowledge::Zero,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.generation.validate()?;
        if !(0.0..=1.0).contains(&self.mix_rho) {
            return Err(PipelineError::Config(format!(
                "mix_rho {} outside [0, 1]",
                self.mix_rho
            )));
        }
        if self.retrieval_mode != RetrievalMode::None && self.n_docs == 0 {
            return Err(PipelineError::Config("n_docs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("mode {0} needs a component that is not configured: {1}")]
    MissingComponent(RetrievalMode, &'static str),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dense(#[from] DenseError),
}

/// Time source for stage timings; swap in [`ZeroClock`] for reproducible traces.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ZeroClock;

impl Clock for ZeroClock {
    fn now(&self) -> Duration {
        Duration::ZERO
    }
}

/// Per-stage wall time in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub query_us: u64,
    pub retrieve_us: u64,
    pub assemble_us: u64,
    pub decode_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnTrace {
    /// SHA-256 of the flattened context.
    pub context_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_query: Option<String>,
    pub engine_results: Vec<String>,
    pub assembled_mode: FidMode,
    pub response: String,
    pub degraded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degradation: Option<String>,
    pub timing: StageTimings,
}

pub fn context_digest(ctx: &DialogueContext) -> String {
    let digest = Sha256::digest(ctx.flatten().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Dense index plus what is needed to turn hits back into documents.
pub struct DenseRetriever {
    index: Arc<DenseIndex>,
    embedder: Arc<dyn Embedder>,
    chunks: HashMap<String, Document>,
}

impl DenseRetriever {
    /// `corpus` must be the one the index was built from with `chunk_size`.
    pub fn new(
        index: Arc<DenseIndex>,
        embedder: Arc<dyn Embedder>,
        corpus: &Corpus,
        chunk_size: usize,
    ) -> Result<Self, DenseError> {
        if embedder.id() != index.embedder_id() {
            return Err(DenseError::Format(format!(
                "index built with {}, embedder is {}",
                index.embedder_id(),
                embedder.id()
            )));
        }
        let chunks = corpus
            .iter()
            .flat_map(|d| {
                crate::corpus::chunk_document(d, chunk_size)
                    .into_iter()
                    .map(move |c| (d, c))
            })
            .filter_map(|(d, c)| chunk_as_document(d, &c).map(|doc| (c.id(), doc)))
            .collect();
        Ok(DenseRetriever {
            index,
            embedder,
            chunks,
        })
    }

    pub fn build(
        corpus: &Corpus,
        embedder: Arc<dyn Embedder>,
        chunk_size: usize,
    ) -> Result<Self, DenseError> {
        let mut builder = DenseIndexBuilder::new(embedder.dims(), embedder.id());
        builder.add_chunks(embedder.as_ref(), &corpus.chunks(chunk_size))?;
        DenseRetriever::new(Arc::new(builder.freeze()), embedder, corpus, chunk_size)
    }

    pub fn index(&self) -> &DenseIndex {
        &self.index
    }

    pub fn retrieve(&self, text: &str, n: usize) -> Result<Vec<Document>, DenseError> {
        let q = self.embedder.embed(text)?;
        let ranked = self.index.top_n(&q, n)?;
        Ok(ranked
            .entries
            .iter()
            .filter_map(|(id, _)| self.chunks.get(id).cloned())
            .collect())
    }
}

fn chunk_as_document(doc: &Document, chunk: &Chunk) -> Option<Document> {
    let source = match doc.source() {
        Source::Live => Source::CommonCrawl,
        s => s,
    };
    Document::new(doc.url(), doc.title(), &chunk.text, source).ok()
}

/// Components for one configuration; cheap to share across threads.
pub struct Pipeline {
    config: PipelineConfig,
    lm: Arc<dyn TokenLm>,
    query_gen: Option<Arc<dyn QueryGenerator>>,
    engine: Option<Arc<dyn SearchEngine>>,
    dense: Option<Arc<DenseRetriever>>,
    clock: Arc<dyn Clock>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, lm: Arc<dyn TokenLm>) -> Self {
        Pipeline {
            config,
            lm,
            query_gen: None,
            engine: None,
            dense: None,
            clock: Arc::new(SystemClock::default()),
        }
    }

    pub fn with_query_generator(mut self, g: Arc<dyn QueryGenerator>) -> Self {
        self.query_gen = Some(g);
        self
    }

    pub fn with_engine(mut self, e: Arc<dyn SearchEngine>) -> Self {
        self.engine = Some(e);
        self
    }

    pub fn with_dense(mut self, d: Arc<DenseRetriever>) -> Self {
        self.dense = Some(d);
        self
    }

    pub fn with_clock(mut self, c: Arc<dyn Clock>) -> Self {
        self.clock = c;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn lm(&self) -> &dyn TokenLm {
        self.lm.as_ref()
    }

    pub fn engine(&self) -> Option<&Arc<dyn SearchEngine>> {
        self.engine.as_ref()
    }

    /// Fails early when the configured mode lacks a component.
    pub fn check(&self) -> Result<(), PipelineError> {
        self.config.validate()?;
        let mode = self.config.retrieval_mode;
        let needs_query = matches!(mode, RetrievalMode::DenseQuery | RetrievalMode::Engine);
        if needs_query && self.query_gen.is_none() {
            return Err(PipelineError::MissingComponent(mode, "query generator"));
        }
        if mode == RetrievalMode::Engine && self.engine.is_none() {
            return Err(PipelineError::MissingComponent(mode, "search engine"));
        }
        if matches!(
            mode,
            RetrievalMode::DenseContext | RetrievalMode::DenseQuery
        ) && self.dense.is_none()
        {
            return Err(PipelineError::MissingComponent(mode, "dense index"));
        }
        Ok(())
    }

    fn elapsed_us(&self, start: Duration) -> u64 {
        self.clock.now().saturating_sub(start).as_micros() as u64
    }

    /// Retrieval half of a turn. Failures degrade to no documents.
    fn retrieve(
        &self,
        ctx: &DialogueContext,
        trace: &mut TurnTrace,
    ) -> Result<(Vec<Document>, SourceKind), PipelineError> {
        let mode = self.config.retrieval_mode;
        let n = self.config.n_docs;
        let degrade = |trace: &mut TurnTrace, why: String| {
            tracing::warn!(mode = %mode, "retrieval degraded: {why}");
            trace.degraded = true;
            trace.degradation = Some(why);
        };
        let t = self.clock.now();
        let query = match mode {
            RetrievalMode::None | RetrievalMode::DenseContext => None,
            RetrievalMode::DenseQuery | RetrievalMode::Engine => {
                let g = self
                    .query_gen
                    .as_ref()
                    .ok_or(PipelineError::MissingComponent(mode, "query generator"))?;
                match g.generate(ctx) {
                    Ok(q) => Some(q),
                    Err(e) => {
                        degrade(trace, format!("query generation: {e}"));
                        trace.timing.query_us = self.elapsed_us(t);
                        return Ok((Vec::new(), SourceKind::Search));
                    }
                }
            }
        };
        trace.timing.query_us = self.elapsed_us(t);
        trace.generated_query = query.as_ref().map(|q| q.text.clone());

        let t = self.clock.now();
        let out = match mode {
            RetrievalMode::None => (Vec::new(), SourceKind::Search),
            RetrievalMode::Engine => {
                let engine = self
                    .engine
                    .as_ref()
                    .ok_or(PipelineError::MissingComponent(mode, "search engine"))?;
                let q = query
                    .expect("query generated above")
                    .with_news(self.config.augment_news);
                match dual_news_search(engine.as_ref(), &q, n) {
                    Ok(r) => (r.results, SourceKind::Search),
                    Err(e) => {
                        degrade(trace, format!("search: {e}"));
                        (Vec::new(), SourceKind::Search)
                    }
                }
            }
            RetrievalMode::DenseContext | RetrievalMode::DenseQuery => {
                let dense = self
                    .dense
                    .as_ref()
                    .ok_or(PipelineError::MissingComponent(mode, "dense index"))?;
                let text = match &query {
                    Some(q) => q.text.clone(),
                    None => ctx.flatten(),
                };
                match dense.retrieve(&text, n) {
                    Ok(docs) => (docs, SourceKind::Dense),
                    Err(e) => {
                        degrade(trace, format!("dense retrieval: {e}"));
                        (Vec::new(), SourceKind::Dense)
                    }
                }
            }
        };
        trace.timing.retrieve_us = self.elapsed_us(t);
        trace.engine_results = out.0.iter().map(|d| d.url().to_owned()).collect();
        Ok(out)
    }

    /// Retrieval and assembly without decoding.
    pub fn assemble(&self, ctx: &DialogueContext) -> Result<(FiDInput, TurnTrace), PipelineError> {
        let mut trace = TurnTrace {
            context_digest: context_digest(ctx),
            generated_query: None,
            engine_results: Vec::new(),
            assembled_mode: FidMode::NoKnowledge,
            response: String::new(),
            degraded: false,
            degradation: None,
            timing: StageTimings::default(),
        };
        let (docs, kind) = self.retrieve(ctx, &mut trace)?;
        let t = self.clock.now();
        let input = assemble_fid_contexts(ctx, &docs, kind, self.config.n_docs);
        trace.timing.assemble_us = self.elapsed_us(t);
        trace.assembled_mode = input.mode;
        Ok((input, trace))
    }

    /// One wizard response for `ctx`. Only configuration and decoding errors
    /// propagate; retrieval problems are recorded in the trace.
    pub fn run_wizard_turn(
        &self,
        ctx: &DialogueContext,
    ) -> Result<(String, TurnTrace), PipelineError> {
        let (input, mut trace) = self.assemble(ctx)?;
        let t = self.clock.now();
        let response = generate(self.lm.as_ref(), &input, &self.config.generation)?;
        trace.timing.decode_us = self.elapsed_us(t);
        trace.response = response.clone();
        Ok((response, trace))
    }

    pub fn evaluate(&self, dialogues: &[WizIntDialogue]) -> Result<EvalReport, PipelineError> {
        self.check()?;
        evaluate_with(
            dialogues,
            self,
            Some(self.lm.as_ref()),
            self.config.workers,
            self.config.empty_knowledge,
        )
    }
}

/// A wizard turn to respond to.
pub struct EvalTurn<'a> {
    pub dialogue: &'a WizIntDialogue,
    pub index: usize,
    pub turn: &'a Turn,
    pub context: DialogueContext,
}

pub struct Generated {
    pub response: String,
    /// Text the gold response is scored under for perplexity; `None` skips it.
    pub conditioning: Option<String>,
    pub degraded: bool,
}

pub trait ResponseGenerator: Send + Sync {
    fn respond(&self, turn: &EvalTurn<'_>) -> Result<Generated, PipelineError>;
}

impl ResponseGenerator for Pipeline {
    fn respond(&self, turn: &EvalTurn<'_>) -> Result<Generated, PipelineError> {
        let (input, mut trace) = self.assemble(&turn.context)?;
        let t = self.clock.now();
        let response = generate(self.lm.as_ref(), &input, &self.config.generation)?;
        trace.timing.decode_us = self.elapsed_us(t);
        Ok(Generated {
            response,
            conditioning: Some(input.conditioning_text()),
            degraded: trace.degraded,
        })
    }
}

fn plain(response: String) -> Result<Generated, PipelineError> {
    Ok(Generated {
        response,
        conditioning: None,
        degraded: false,
    })
}

/// Returns the gold response.
pub struct PerfectCopy;

impl ResponseGenerator for PerfectCopy {
    fn respond(&self, turn: &EvalTurn<'_>) -> Result<Generated, PipelineError> {
        plain(turn.turn.text.clone())
    }
}

/// Returns the selected knowledge sentences joined by spaces.
pub struct KnowledgeCopy;

impl ResponseGenerator for KnowledgeCopy {
    fn respond(&self, turn: &EvalTurn<'_>) -> Result<Generated, PipelineError> {
        plain(knowledge_text(&turn.turn.selected))
    }
}

/// Repeats the previous utterance, or the last persona line at the start.
pub struct ContextEcho;

impl ResponseGenerator for ContextEcho {
    fn respond(&self, turn: &EvalTurn<'_>) -> Result<Generated, PipelineError> {
        let ctx = &turn.context;
        let text = match ctx.turns.last() {
            Some(t) => t.text.clone(),
            None => ctx.persona.last().cloned().unwrap_or_default(),
        };
        plain(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricReport,
    pub degraded_turns: usize,
}

impl EvalReport {
    pub fn to_json(&self, mode: RetrievalMode) -> serde_json::Value {
        let mut v = self.metrics.to_display_json();
        v["mode"] = serde_json::json!(mode.as_str());
        v["degraded_turns"] = serde_json::json!(self.degraded_turns);
        v
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.metrics)?;
        if self.degraded_turns > 0 {
            write!(
                f,
                "\n{} turn(s) fell back to no knowledge",
                self.degraded_turns
            )?;
        }
        Ok(())
    }
}

fn eval_dialogue(
    d: &WizIntDialogue,
    generator: &dyn ResponseGenerator,
    lm: Option<&dyn TokenLm>,
    policy: EmptyKnowledge,
) -> Result<(MetricAccumulator, usize), PipelineError> {
    let mut acc = MetricAccumulator::new(policy);
    let mut degraded = 0;
    for (index, turn) in d.turns.iter().enumerate() {
        if turn.speaker != Speaker::Wizard {
            continue;
        }
        let et = EvalTurn {
            dialogue: d,
            index,
            turn,
            context: d.context_before(index),
        };
        let g = generator.respond(&et)?;
        acc.add(&g.response, &turn.text, &turn.selected);
        degraded += usize::from(g.degraded);
        if let (Some(lm), Some(cond)) = (lm, g.conditioning.as_deref()) {
            let (lp, n) = target_log_prob(lm, cond, &turn.text)?;
            acc.add_log_prob(lp, n);
        }
    }
    Ok((acc, degraded))
}

/// Scores `generator` on every wizard turn. Dialogues run in parallel; partial
/// results are merged in dataset order so reports do not depend on scheduling.
pub fn evaluate_with(
    dialogues: &[WizIntDialogue],
    generator: &dyn ResponseGenerator,
    lm: Option<&dyn TokenLm>,
    workers: usize,
    policy: EmptyKnowledge,
) -> Result<EvalReport, PipelineError> {
    let run = || -> Result<Vec<(MetricAccumulator, usize)>, PipelineError> {
        dialogues
            .par_iter()
            .map(|d| eval_dialogue(d, generator, lm, policy))
            .collect()
    };
    let parts = if workers == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?
            .install(run)?
    };
    let mut acc = MetricAccumulator::new(policy);
    let mut degraded_turns = 0;
    for (part, degraded) in &parts {
        acc.merge(part);
        degraded_turns += degraded;
    }
    Ok(EvalReport {
        metrics: acc.report(),
        degraded_turns,
    })
}

/// Response-pair training examples with knowledge regularization at
/// `config.mix_rho`, seeded from the generation seed.
pub fn emit_training_examples(
    config: &PipelineConfig,
    dialogues: &[WizIntDialogue],
) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.generation.seed);
    extract_response_pairs(dialogues)
        .iter()
        .map(|p| mix_regularized(p, config.mix_rho, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion_decode::{train_ngram_lm, CacheMixLm};
    use crate::query_gen::ExtractiveQueryGenerator;
    use crate::search_engine::{Bm25Engine, SearchError};

    fn corpus() -> Corpus {
        Corpus::from_documents(vec![
            Document::new(
                "https://t.com/tennis",
                "Tennis",
                "Tennis is a racket sport played on a court with a net. Players hit a ball over the net.",
                Source::CommonCrawl,
            )
            .unwrap(),
            Document::new(
                "https://c.com/cocktail",
                "Vesper",
                "The vesper martini is a cocktail made with gin vodka and lillet. James Bond ordered it.",
                Source::CommonCrawl,
            )
            .unwrap(),
        ])
    }

    fn lm(corpus: &Corpus) -> Arc<dyn TokenLm> {
        let texts: Vec<String> = corpus.iter().map(|d| d.content().to_owned()).collect();
        let base = Arc::new(train_ngram_lm(&texts, 3, 0.1).unwrap());
        Arc::new(CacheMixLm::new(base, 0.3))
    }

    fn ctx() -> DialogueContext {
        let mut c = DialogueContext {
            persona: vec!["I love tennis.".into()],
            turns: vec![],
        };
        c.push(Speaker::Apprentice, "who plays tennis on a court");
        c
    }

    fn params() -> GenerationParams {
        GenerationParams {
            min_len: 5,
            max_len: 10,
            ..Default::default()
        }
    }

    fn engine_pipeline(engine: Arc<dyn SearchEngine>) -> Pipeline {
        let c = corpus();
        let config = PipelineConfig {
            retrieval_mode: RetrievalMode::Engine,
            generation: params(),
            ..Default::default()
        };
        Pipeline::new(config, lm(&c))
            .with_query_generator(Arc::new(ExtractiveQueryGenerator::from_corpus(&c, 3)))
            .with_engine(engine)
            .with_clock(Arc::new(ZeroClock))
    }

    #[test]
    fn none_mode_has_no_query() {
        let c = corpus();
        let p = Pipeline::new(
            PipelineConfig {
                generation: params(),
                ..Default::default()
            },
            lm(&c),
        );
        let (resp, trace) = p.run_wizard_turn(&ctx()).unwrap();
        assert!(trace.generated_query.is_none());
        assert_eq!(trace.assembled_mode, FidMode::NoKnowledge);
        assert_eq!(resp, trace.response);
        assert!(!trace.degraded);
    }

    #[test]
    fn engine_mode_is_deterministic() {
        let c = corpus();
        let p = engine_pipeline(Arc::new(Bm25Engine::with_default_params(&c)));
        let a = p.run_wizard_turn(&ctx()).unwrap();
        let b = p.run_wizard_turn(&ctx()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.engine_results[0], "https://t.com/tennis");
        assert_eq!(a.1.assembled_mode, FidMode::Fid);
        assert!(a.1.generated_query.as_deref().unwrap().contains("tennis"));
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

    #[test]
    fn engine_failure_degrades() {
        let (resp, trace) = engine_pipeline(Arc::new(Down))
            .run_wizard_turn(&ctx())
            .unwrap();
        assert!(!resp.is_empty());
        assert!(trace.degraded);
        assert_eq!(trace.assembled_mode, FidMode::NoKnowledge);
        assert!(trace.engine_results.is_empty());
    }

    #[test]
    fn missing_component_is_reported() {
        let c = corpus();
        let p = Pipeline::new(
            PipelineConfig {
                retrieval_mode: RetrievalMode::DenseContext,
                ..Default::default()
            },
            lm(&c),
        );
        assert!(matches!(
            p.check(),
            Err(PipelineError::MissingComponent(..))
        ));
    }

    #[test]
    fn dense_modes_retrieve_chunks() {
        let c = corpus();
        let dense = DenseRetriever::build(
            &c,
            Arc::new(crate::dense_index::HashingEmbedder::default()),
            100,
        )
        .unwrap();
        let p = Pipeline::new(
            PipelineConfig {
                retrieval_mode: RetrievalMode::DenseContext,
                n_docs: 1,
                generation: params(),
                ..Default::default()
            },
            lm(&c),
        )
        .with_dense(Arc::new(dense));
        let (_, trace) = p.run_wizard_turn(&ctx()).unwrap();
        assert_eq!(trace.engine_results, vec!["https://t.com/tennis"]);
        assert!(trace.generated_query.is_none());
    }

    #[test]
    fn mode_parsing() {
        for m in ["none", "dense_context", "dense_query", "engine"] {
            assert_eq!(m.parse::<RetrievalMode>().unwrap().as_str(), m);
        }
        assert!("bing".parse::<RetrievalMode>().is_err());
    }
}
