//! Component wiring shared by the `sea` subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sea_core::corpus::Corpus;
use sea_core::dense_index::{DenseIndex, DenseIndexBuilder, Embedder, HashingEmbedder};
use sea_core::fusion_decode::{train_ngram_lm, CacheMixLm, TokenLm};
use sea_core::orchestrator::{DenseRetriever, Pipeline, PipelineConfig, RetrievalMode};
use sea_core::query_gen::ExtractiveQueryGenerator;
use sea_core::search_engine::{
    Bm25Engine, Bm25Params, Granularity, RemoteConfig, RemoteSearchClient, ReqwestTransport,
    SearchEngine,
};

/// Settings for the toy generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub order: usize,
    pub k: f64,
    /// Weight of the unigram cache over retrieved knowledge and context.
    pub cache_weight: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            order: 3,
            k: 0.1,
            cache_weight: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub chunk_size: usize,
    pub embed_dims: usize,
    pub query_terms: usize,
    /// Remote endpoint for `engine_id = "remote"`.
    pub remote_endpoint: Option<String>,
    pub remote_cache: Option<PathBuf>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            chunk_size: 100,
            embed_dims: sea_core::dense_index::DEFAULT_DIMS,
            query_terms: 4,
            remote_endpoint: None,
            remote_cache: None,
        }
    }
}

/// Contents of a `--config` TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeaConfig {
    pub pipeline: PipelineConfig,
    pub lm: LmConfig,
    pub retrieval: RetrievalConfig,
}

impl SeaConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Toy LM trained on the corpus text, mixed with a cache over its conditioning.
pub fn build_lm(corpus: &Corpus, cfg: &LmConfig) -> Result<Arc<dyn TokenLm>> {
    let texts: Vec<String> = corpus
        .iter()
        .map(|d| format!("{} {}", d.title(), d.content()))
        .collect();
    let base = Arc::new(train_ngram_lm(&texts, cfg.order, cfg.k)?);
    if !(0.0..=1.0).contains(&cfg.cache_weight) {
        bail!("cache_weight must be in [0, 1]");
    }
    Ok(Arc::new(CacheMixLm::new(base, cfg.cache_weight)))
}

pub fn build_engine(corpus: &Corpus, cfg: &SeaConfig) -> Result<Arc<dyn SearchEngine>> {
    match cfg.pipeline.engine_id.as_str() {
        "bm25" => Ok(Arc::new(Bm25Engine::with_default_params(corpus))),
        "bm25_chunked" => Ok(Arc::new(Bm25Engine::new(
            corpus,
            Bm25Params::default(),
            Granularity::Chunk(cfg.retrieval.chunk_size),
        ))),
        "remote" => {
            let endpoint = cfg
                .retrieval
                .remote_endpoint
                .as_deref()
                .context("engine_id \"remote\" needs retrieval.remote_endpoint")?;
            let mut rc = RemoteConfig::from_env(endpoint.parse().context("bad remote_endpoint")?)?;
            rc.cache_path = cfg.retrieval.remote_cache.clone();
            let transport = ReqwestTransport::new(rc.timeout).map_err(anyhow::Error::msg)?;
            Ok(Arc::new(
                RemoteSearchClient::new(rc, Box::new(transport))?.with_snapshot(corpus.clone()),
            ))
        }
        other => bail!("unknown engine_id {other:?} (bm25, bm25_chunked or remote)"),
    }
}

pub fn build_index(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    chunk_size: usize,
) -> Result<DenseIndex> {
    let mut b = DenseIndexBuilder::new(embedder.dims(), embedder.id());
    b.add_chunks(embedder, &corpus.chunks(chunk_size))?;
    Ok(b.freeze())
}

/// Everything the configured mode needs, built from the corpus. A saved
/// index is used for dense modes when given; otherwise one is built in memory.
pub fn build_pipeline(corpus: &Corpus, cfg: &SeaConfig, index: Option<&Path>) -> Result<Pipeline> {
    cfg.pipeline.validate()?;
    let lm = build_lm(corpus, &cfg.lm)?;
    let mut p = Pipeline::new(cfg.pipeline.clone(), lm);
    let mode = cfg.pipeline.retrieval_mode;
    if matches!(mode, RetrievalMode::DenseQuery | RetrievalMode::Engine) {
        p = p.with_query_generator(Arc::new(ExtractiveQueryGenerator::from_corpus(
            corpus,
            cfg.retrieval.query_terms,
        )));
    }
    if mode == RetrievalMode::Engine {
        p = p.with_engine(build_engine(corpus, cfg)?);
    }
    if matches!(
        mode,
        RetrievalMode::DenseContext | RetrievalMode::DenseQuery
    ) {
        let dense = match index {
            Some(path) => {
                let idx = DenseIndex::load(path)
                    .with_context(|| format!("loading {}", path.display()))?;
                let embedder = Arc::new(HashingEmbedder::new(idx.dims()));
                DenseRetriever::new(Arc::new(idx), embedder, corpus, cfg.retrieval.chunk_size)?
            }
            None => DenseRetriever::build(
                corpus,
                Arc::new(HashingEmbedder::new(cfg.retrieval.embed_dims)),
                cfg.retrieval.chunk_size,
            )?,
        };
        p = p.with_dense(Arc::new(dense));
    }
    p.check()?;
    Ok(p)
}
