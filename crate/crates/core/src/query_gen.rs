//! Search query generation from a dialogue context, and the downstream
//! query-quality metrics (% in top-k, average F1, gold recall@k).

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::corpus::{Corpus, Document};
use crate::metrics::unigram_f1;
use crate::search_engine::{HttpTransport, SearchQuery, TermStats};
use crate::text::{normalize_tokens, truncate_words};

pub const DEFAULT_MAX_TERMS: usize = 4;

/// English function words removed before scoring query terms.
pub const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "im",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
    "dont",
    "yes",
    "oh",
    "really",
    "also",
    "like",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryGenError {
    #[error("dialogue context has no turns")]
    EmptyContext,
    #[error("query generator unavailable: {0}")]
    GeneratorUnavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Wizard,
    Apprentice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextTurn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DialogueContext {
    pub persona: Vec<String>,
    pub turns: Vec<ContextTurn>,
}

impl DialogueContext {
    pub fn push(&mut self, speaker: Speaker, text: impl Into<String>) {
        self.turns.push(ContextTurn {
            speaker,
            text: text.into(),
        });
    }

    /// Persona lines then turns, one per line.
    pub fn flatten(&self) -> String {
        self.persona
            .iter()
            .map(|p| format!("your persona: {p}"))
            .chain(self.turns.iter().map(|t| t.text.clone()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub trait QueryGenerator: Send + Sync {
    fn generate(&self, ctx: &DialogueContext) -> Result<SearchQuery, QueryGenError>;
}

fn is_stopword(t: &str) -> bool {
    STOPWORDS.contains(&t)
}

/// Deterministic tf·idf term picker standing in for a trained generator.
///
/// Candidates are the non-stopword tokens of the persona and the last two
/// turns, in that surface order. Each is scored tf · ln(1 + N/df); terms unseen
/// in the corpus score 0 and are only used when nothing else scores. The top
/// `max_terms` (ties to the earlier term) are emitted in surface order.
#[derive(Debug, Clone)]
pub struct ExtractiveQueryGenerator {
    stats: Arc<TermStats>,
    max_terms: usize,
}

impl ExtractiveQueryGenerator {
    pub fn new(stats: Arc<TermStats>, max_terms: usize) -> Self {
        ExtractiveQueryGenerator {
            stats,
            max_terms: max_terms.max(1),
        }
    }

    pub fn from_corpus(corpus: &Corpus, max_terms: usize) -> Self {
        ExtractiveQueryGenerator::new(Arc::new(corpus_term_stats(corpus)), max_terms)
    }

    fn idf(&self, term: &str) -> f64 {
        match self.stats.df(term) {
            0 => 0.0,
            df => (1.0 + self.stats.n_docs as f64 / df as f64).ln(),
        }
    }
}

/// Document frequencies over title + content of every document.
pub fn corpus_term_stats(corpus: &Corpus) -> TermStats {
    let tokens: Vec<Vec<String>> = corpus
        .iter()
        .map(|d| normalize_tokens(&format!("{} {}", d.title(), d.content())))
        .collect();
    TermStats::from_token_lists(tokens.iter().map(Vec::as_slice))
}

/// The extractive baseline as a free function.
pub fn extractive_query_baseline(
    ctx: &DialogueContext,
    stats: &TermStats,
    max_terms: usize,
) -> Result<SearchQuery, QueryGenError> {
    ExtractiveQueryGenerator::new(Arc::new(stats.clone()), max_terms).generate(ctx)
}

impl QueryGenerator for ExtractiveQueryGenerator {
    fn generate(&self, ctx: &DialogueContext) -> Result<SearchQuery, QueryGenError> {
        let last = ctx.turns.last().ok_or(QueryGenError::EmptyContext)?;
        let recent = &ctx.turns[ctx.turns.len().saturating_sub(2)..];
        let sources = ctx
            .persona
            .iter()
            .map(String::as_str)
            .chain(recent.iter().map(|t| t.text.as_str()));

        // first position and frequency of each candidate term
        let mut order: Vec<String> = Vec::new();
        let mut tf: HashMap<String, usize> = HashMap::new();
        for token in sources.flat_map(normalize_tokens) {
            if is_stopword(&token) {
                continue;
            }
            let count = tf.entry(token.clone()).or_insert(0);
            if *count == 0 {
                order.push(token);
            }
            *count += 1;
        }
        if order.is_empty() {
            let fallback = truncate_words(&last.text, self.max_terms);
            if fallback.is_empty() {
                return Err(QueryGenError::EmptyContext);
            }
            return Ok(SearchQuery::new(fallback));
        }

        let mut scored: Vec<(usize, f64)> = order
            .iter()
            .enumerate()
            .map(|(pos, t)| (pos, tf[t] as f64 * self.idf(t)))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        let chosen: Vec<usize> = if scored.is_empty() {
            (0..order.len().min(self.max_terms)).collect()
        } else {
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut keep: Vec<usize> = scored
                .iter()
                .take(self.max_terms)
                .map(|&(p, _)| p)
                .collect();
            keep.sort_unstable();
            keep
        };
        let text = chosen
            .iter()
            .map(|&p| order[p].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        Ok(SearchQuery::new(text))
    }
}

/// Calls an external model: POSTs `{"context": ..., "persona": [...]}` and
/// expects `{"query": "..."}`.
pub struct RemoteQueryGenerator {
    endpoint: Url,
    transport: Box<dyn HttpTransport>,
}

#[derive(Deserialize)]
struct RemoteQueryReply {
    query: String,
}

impl RemoteQueryGenerator {
    pub fn new(endpoint: Url, transport: Box<dyn HttpTransport>) -> Self {
        RemoteQueryGenerator {
            endpoint,
            transport,
        }
    }
}

impl QueryGenerator for RemoteQueryGenerator {
    fn generate(&self, ctx: &DialogueContext) -> Result<SearchQuery, QueryGenError> {
        if ctx.turns.is_empty() {
            return Err(QueryGenError::EmptyContext);
        }
        let body = serde_json::json!({
            "context": ctx.turns.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join("\n"),
            "persona": ctx.persona,
        });
        let resp = self
            .transport
            .post_json(&self.endpoint, &body.to_string())
            .map_err(QueryGenError::GeneratorUnavailable)?;
        if !(200..300).contains(&resp.status) {
            return Err(QueryGenError::GeneratorUnavailable(format!(
                "HTTP {}",
                resp.status
            )));
        }
        let reply: RemoteQueryReply = serde_json::from_str(&resp.body)
            .map_err(|e| QueryGenError::GeneratorUnavailable(e.to_string()))?;
        if reply.query.trim().is_empty() {
            return Err(QueryGenError::GeneratorUnavailable(
                "empty query returned".into(),
            ));
        }
        Ok(SearchQuery::new(reply.query.trim()))
    }
}

/// Retrieval outcome of one generated query against the human's.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryEvalSets {
    /// Documents returned for the human wizard's query.
    pub gold_retrieved: Vec<String>,
    /// Documents the wizard selected knowledge from.
    pub selected: Vec<String>,
    /// Documents returned for the generated query, best first.
    pub generated: Vec<String>,
}

/// Values are on the ×100 scale for percentages; recall is a fraction.
/// `avg_f1` is absent when no case had document text to compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub pct_in_top_k: f64,
    pub avg_f1: Option<f64>,
    pub gold_recall_at_k: f64,
    pub n_cases: usize,
}

/// Text compared by the average-F1 metric: title plus the first 100 words.
pub fn doc_eval_text(doc: &Document) -> String {
    format!("{} {}", doc.title(), truncate_words(doc.content(), 100))
}

/// Downstream retrieval quality of generated queries.
///
/// Only the first `k` generated documents count. Cases with an empty gold set
/// are left out of `pct_in_top_k` and `avg_f1`. `texts` maps urls to the text
/// used by `avg_f1`; urls without text are skipped there.
pub fn query_metrics(
    cases: &[QueryEvalSets],
    k: usize,
    texts: &HashMap<String, String>,
) -> QueryMetrics {
    let mut pct_sum = 0.0;
    let mut pct_n = 0usize;
    let mut f1_sum = 0.0;
    let mut f1_n = 0usize;
    let mut hits = 0usize;
    for case in cases {
        let top: Vec<&String> = case.generated.iter().take(k).collect();
        let top_set: HashSet<&str> = top.iter().map(|s| s.as_str()).collect();
        if case.selected.iter().any(|d| top_set.contains(d.as_str())) {
            hits += 1;
        }
        let gold: Vec<&String> = {
            let mut seen = HashSet::new();
            case.gold_retrieved
                .iter()
                .filter(|r| seen.insert(r.as_str()))
                .collect()
        };
        if gold.is_empty() {
            continue;
        }
        let found = gold.iter().filter(|r| top_set.contains(r.as_str())).count();
        pct_sum += 100.0 * found as f64 / gold.len() as f64;
        pct_n += 1;

        let gold_texts: Vec<&String> = gold.iter().filter_map(|r| texts.get(r.as_str())).collect();
        let maxes: Vec<f64> = top
            .iter()
            .filter_map(|s| texts.get(s.as_str()))
            .filter(|_| !gold_texts.is_empty())
            .map(|s| {
                gold_texts
                    .iter()
                    .map(|r| unigram_f1(s, r))
                    .fold(0.0, f64::max)
            })
            .collect();
        if !maxes.is_empty() {
            f1_sum += 100.0 * maxes.iter().sum::<f64>() / maxes.len() as f64;
            f1_n += 1;
        }
    }
    QueryMetrics {
        pct_in_top_k: if pct_n == 0 {
            0.0
        } else {
            pct_sum / pct_n as f64
        },
        avg_f1: (f1_n > 0).then(|| f1_sum / f1_n as f64),
        gold_recall_at_k: if cases.is_empty() {
            0.0
        } else {
            hits as f64 / cases.len() as f64
        },
        n_cases: cases.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(entries: &[(&str, usize)], n_docs: usize) -> TermStats {
        TermStats {
            n_docs,
            avg_len: 10.0,
            doc_freq: entries.iter().map(|(t, d)| (t.to_string(), *d)).collect(),
        }
    }

    fn ctx(persona: &[&str], turns: &[&str]) -> DialogueContext {
        let mut c = DialogueContext {
            persona: persona.iter().map(|s| s.to_string()).collect(),
            turns: vec![],
        };
        for (i, t) in turns.iter().enumerate() {
            c.push(
                if i % 2 == 0 {
                    Speaker::Apprentice
                } else {
                    Speaker::Wizard
                },
                *t,
            );
        }
        c
    }

    #[test]
    fn stopword_list_size() {
        assert!(
            (110..=140).contains(&STOPWORDS.len()),
            "{}",
            STOPWORDS.len()
        );
        let unique: HashSet<_> = STOPWORDS.iter().collect();
        assert_eq!(unique.len(), STOPWORDS.len());
    }

    #[test]
    fn rare_term_outranks_common() {
        let s = stats(&[("tennis", 1), ("like", 900), ("enjoy", 900)], 1000);
        let q = extractive_query_baseline(&ctx(&[], &["I enjoy tennis"]), &s, 1).unwrap();
        assert_eq!(q.text, "tennis");
        let q = extractive_query_baseline(&ctx(&[], &["I enjoy tennis"]), &s, 4).unwrap();
        assert_eq!(q.text, "enjoy tennis");
    }

    #[test]
    fn single_content_word() {
        let s = stats(&[("tennis", 3)], 10);
        let q = extractive_query_baseline(&ctx(&[], &["tennis"]), &s, 4).unwrap();
        assert_eq!(q.text, "tennis");
    }

    #[test]
    fn all_stopwords_falls_back_to_last_turn() {
        let s = stats(&[], 10);
        let q = extractive_query_baseline(&ctx(&[], &["the the the the the"]), &s, 4).unwrap();
        assert_eq!(q.text, "the the the the");
    }

    #[test]
    fn unseen_terms_used_when_nothing_scores() {
        let s = stats(&[], 10);
        let q = extractive_query_baseline(&ctx(&[], &["quantum zebra"]), &s, 4).unwrap();
        assert_eq!(q.text, "quantum zebra");
    }

    #[test]
    fn empty_context_errors() {
        let s = stats(&[], 10);
        assert_eq!(
            extractive_query_baseline(&ctx(&["x"], &[]), &s, 4),
            Err(QueryGenError::EmptyContext)
        );
    }

    #[test]
    fn only_last_two_turns_count() {
        let s = stats(&[("golf", 1), ("chess", 1), ("tennis", 1)], 10);
        let q = extractive_query_baseline(&ctx(&[], &["golf", "chess", "tennis"]), &s, 4).unwrap();
        assert_eq!(q.text, "chess tennis");
    }

    fn case(r: &[&str], d: &[&str], s: &[&str]) -> QueryEvalSets {
        let v = |x: &[&str]| x.iter().map(|s| s.to_string()).collect();
        QueryEvalSets {
            gold_retrieved: v(r),
            selected: v(d),
            generated: v(s),
        }
    }

    #[test]
    fn identical_sets_score_full() {
        let m = query_metrics(
            &[case(&["a", "b"], &["a"], &["a", "b"])],
            5,
            &HashMap::new(),
        );
        assert_eq!(m.pct_in_top_k, 100.0);
        assert_eq!(m.gold_recall_at_k, 1.0);
        assert_eq!(m.avg_f1, None);
    }

    #[test]
    fn disjoint_selection_has_zero_recall() {
        let cases = [case(&["a"], &["z"], &["a"]), case(&["b"], &["y"], &["c"])];
        assert_eq!(
            query_metrics(&cases, 5, &HashMap::new()).gold_recall_at_k,
            0.0
        );
    }

    #[test]
    fn avg_f1_uses_best_gold_match() {
        let texts: HashMap<String, String> = [
            ("r1", "tennis player spain"),
            ("r2", "golf"),
            ("s1", "tennis player"),
            ("s2", "chess"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let m = query_metrics(&[case(&["r1", "r2"], &[], &["s1", "s2"])], 5, &texts);
        // s1 vs r1: P=1, R=2/3 -> 0.8; s2 -> 0
        assert!((m.avg_f1.unwrap() - 40.0).abs() < 1e-12);
        assert_eq!(m.pct_in_top_k, 0.0);
    }

    #[test]
    fn empty_gold_case_is_skipped_for_pct() {
        let cases = [case(&[], &["a"], &["a"]), case(&["b"], &[], &["b"])];
        let m = query_metrics(&cases, 5, &HashMap::new());
        assert_eq!(m.pct_in_top_k, 100.0);
        assert_eq!(m.gold_recall_at_k, 0.5);
    }

    #[test]
    fn only_top_k_generated_count() {
        let cases = [case(&["c"], &["c"], &["a", "b", "c"])];
        assert_eq!(query_metrics(&cases, 2, &HashMap::new()).pct_in_top_k, 0.0);
        assert_eq!(
            query_metrics(&cases, 3, &HashMap::new()).pct_in_top_k,
            100.0
        );
    }
}
