//! Grounded context assembly and constrained decoding.
//!
//! Each retrieved document becomes one segment (document text, separator,
//! flattened dialogue context) in a [`FiDInput`]. A neural backend would encode
//! segments separately and fuse them in the decoder; the toy pipeline conditions
//! on the concatenation of segments. Decoding is [`beam_search`] over any
//! [`TokenLm`], optionally marginalized over documents with RAG-Token.

mod beam;
mod lm;
mod rag;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::query_gen::DialogueContext;
use crate::text::truncate_words;
use crate::training_data::Turn;

pub use beam::{apply_masks, beam_search, blocked_tokens, Specials};
pub use lm::{
    train_ngram_lm, CacheMixLm, NgramLm, TokenId, TokenLm, UniformLm, Vocab, BOS, EOS, UNK,
};
pub use rag::{mix_distributions, rag_token_dist, RagTokenLm};

/// Words of a dense-retrieval chunk handed to the generator.
pub const DENSE_SEGMENT_WORDS: usize = 100;
/// Tokens of a search-engine document handed to the generator.
pub const SEARCH_SEGMENT_TOKENS: usize = 256;
pub const DEFAULT_N_DOCS: usize = 5;
pub const SEGMENT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("every continuation is blocked before the minimum length")]
    NoValidContinuation,
    #[error("training corpus has no tokens")]
    EmptyCorpus,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub beam_size: usize,
    pub min_len: usize,
    /// 0 disables blocking.
    pub block_ngram: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            beam_size: 3,
            min_len: 20,
            block_ngram: 3,
            max_len: 40,
            seed: 0,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_size == 0 {
            return Err(DecodeError::InvalidParams(
                "beam_size must be at least 1".into(),
            ));
        }
        if self.max_len == 0 || self.max_len < self.min_len {
            return Err(DecodeError::InvalidParams(format!(
                "max_len {} must be positive and at least min_len {}",
                self.max_len, self.min_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidMode {
    Fid,
    FidGold,
    NoKnowledge,
}

/// Where the documents came from, which decides how they are truncated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Dense,
    Search,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FidSegment {
    pub doc_url: Option<String>,
    pub knowledge: String,
    pub context: String,
}

impl FidSegment {
    pub fn render(&self) -> String {
        if self.knowledge.is_empty() {
            self.context.clone()
        } else {
            format!("{}{SEGMENT_SEPARATOR}{}", self.knowledge, self.context)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiDInput {
    pub segments: Vec<FidSegment>,
    pub mode: FidMode,
}

impl FiDInput {
    pub fn context_only(ctx: &DialogueContext) -> Self {
        FiDInput {
            segments: vec![FidSegment {
                doc_url: None,
                knowledge: String::new(),
                context: ctx.flatten(),
            }],
            mode: FidMode::NoKnowledge,
        }
    }

    pub fn segment_texts(&self) -> Vec<String> {
        self.segments.iter().map(FidSegment::render).collect()
    }

    /// Concatenated segments: what the toy generator conditions on.
    pub fn conditioning_text(&self) -> String {
        self.segment_texts().join(SEGMENT_SEPARATOR)
    }

    pub fn doc_urls(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| s.doc_url.as_deref())
            .collect()
    }
}

fn knowledge_part(doc: &Document, kind: SourceKind) -> String {
    match kind {
        SourceKind::Dense => truncate_words(doc.content(), DENSE_SEGMENT_WORDS),
        SourceKind::Search => truncate_words(
            &format!("{} {}", doc.title(), doc.content()),
            SEARCH_SEGMENT_TOKENS,
        ),
    }
}

/// One segment per document (first `n` by rank); no documents gives a single
/// context-only segment.
pub fn assemble_fid_contexts(
    ctx: &DialogueContext,
    docs: &[Document],
    source_kind: SourceKind,
    n: usize,
) -> FiDInput {
    if docs.is_empty() || n == 0 {
        return FiDInput::context_only(ctx);
    }
    let context = ctx.flatten();
    FiDInput {
        segments: docs
            .iter()
            .take(n)
            .map(|d| FidSegment {
                doc_url: Some(d.url().to_owned()),
                knowledge: knowledge_part(d, source_kind),
                context: context.clone(),
            })
            .collect(),
        mode: FidMode::Fid,
    }
}

/// Training-time assembly for a dataset wizard turn.
///
/// `fid` re-runs retrieval through `retrieve`; `fid_gold` uses the documents
/// recorded for the wizard's last search. A `fid_gold` turn without a recorded
/// search degrades to context-only and bumps `warnings`.
pub fn assemble_gold_contexts(
    ctx: &DialogueContext,
    turn: &Turn,
    mode: FidMode,
    retrieve: &mut dyn FnMut(&DialogueContext) -> Vec<Document>,
    n: usize,
    warnings: &AtomicUsize,
) -> FiDInput {
    match mode {
        FidMode::NoKnowledge => FiDInput::context_only(ctx),
        FidMode::Fid => assemble_fid_contexts(ctx, &retrieve(ctx), SourceKind::Search, n),
        FidMode::FidGold => match turn.searches.last() {
            Some(search) if !search.results.is_empty() => {
                let docs: Vec<Document> = search
                    .results
                    .iter()
                    .filter_map(|r| r.to_document().ok())
                    .collect();
                let mut input = assemble_fid_contexts(ctx, &docs, SourceKind::Search, n);
                if input.mode == FidMode::Fid {
                    input.mode = FidMode::FidGold;
                }
                input
            }
            _ => {
                warnings.fetch_add(1, Ordering::Relaxed);
                FiDInput::context_only(ctx)
            }
        },
    }
}

/// Decodes a response for `input` with `lm` conditioned on its concatenated
/// segments.
pub fn generate(
    lm: &dyn TokenLm,
    input: &FiDInput,
    params: &GenerationParams,
) -> Result<String, DecodeError> {
    let vocab = lm.vocab();
    let conditioning = vocab.encode(&input.conditioning_text());
    let specials = Specials {
        eos: vocab.eos(),
        banned: vec![vocab.bos(), vocab.unk()],
    };
    let tokens = beam_search(
        |prefix| lm.next_dist(&conditioning, prefix),
        params,
        &specials,
    )?;
    Ok(vocab.decode(&tokens))
}
