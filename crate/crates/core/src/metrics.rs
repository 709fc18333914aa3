//! Automatic dialogue metrics: unigram F1 against the gold response,
//! Knowledge F1 against the wizard's selected sentences, and corpus-level
//! perplexity under a [`TokenLm`].
//!
//! F1 uses *multiset* overlap: a token repeated twice in both strings counts
//! twice. Perplexity is micro-averaged over all target tokens, EOS included.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion_decode::TokenLm;
pub use crate::text::normalize_tokens;
use crate::training_data::SelectedSentence;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no targets to score")]
    EmptyTargets,
    #[error("model assigned zero probability to {token:?}")]
    ZeroProbability { token: String },
}

/// Precision, recall and F1 of a bag-of-tokens overlap.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Overlap {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn overlap_tokens(prediction: &[String], reference: &[String]) -> Overlap {
    if prediction.is_empty() || reference.is_empty() {
        return Overlap::default();
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in prediction {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return Overlap::default();
    }
    let precision = common as f64 / prediction.len() as f64;
    let recall = common as f64 / reference.len() as f64;
    Overlap {
        precision,
        recall,
        f1: 2.0 * precision * recall / (precision + recall),
    }
}

pub fn overlap(prediction: &str, reference: &str) -> Overlap {
    overlap_tokens(&normalize_tokens(prediction), &normalize_tokens(reference))
}

pub fn unigram_f1(prediction: &str, reference: &str) -> f64 {
    overlap(prediction, reference).f1
}

/// Selected sentences joined by single spaces, in selection order.
pub fn knowledge_text(selected: &[SelectedSentence]) -> String {
    selected
        .iter()
        .map(|s| s.sentence.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Unigram F1 against the concatenated knowledge; 0 with no selections.
pub fn knowledge_f1(prediction: &str, selected: &[SelectedSentence]) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    unigram_f1(prediction, &knowledge_text(selected))
}

/// Sum of natural-log probabilities and the token count of `target` + EOS.
pub fn target_log_prob(
    lm: &dyn TokenLm,
    conditioning: &str,
    target: &str,
) -> Result<(f64, usize), MetricsError> {
    let vocab = lm.vocab();
    let cond = vocab.encode(conditioning);
    let mut ids = vocab.encode(target);
    ids.push(vocab.eos());
    let mut total = 0.0;
    for i in 0..ids.len() {
        let dist = lm.next_dist(&cond, &ids[..i]);
        let p = dist[ids[i] as usize];
        if p.is_nan() || p <= 0.0 {
            return Err(MetricsError::ZeroProbability {
                token: vocab.token(ids[i]).to_owned(),
            });
        }
        total += p.ln();
    }
    Ok((total, ids.len()))
}

/// exp(−Σ log P / Σ tokens) over every (conditioning, target) pair.
pub fn perplexity(lm: &dyn TokenLm, examples: &[(String, String)]) -> Result<f64, MetricsError> {
    if examples.is_empty() {
        return Err(MetricsError::EmptyTargets);
    }
    let mut log_prob = 0.0;
    let mut count = 0usize;
    for (cond, target) in examples {
        let (lp, n) = target_log_prob(lm, cond, target)?;
        log_prob += lp;
        count += n;
    }
    Ok((-log_prob / count as f64).exp())
}

/// How turns without gold knowledge enter the KF1 average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyKnowledge {
    /// Score 0 and count the turn.
    #[default]
    Zero,
    /// Leave the turn out of the KF1 average.
    Skip,
}

/// Metric values are fractions in [0, 1]; [`fmt::Display`] and
/// [`MetricReport::to_display_json`] scale F1/KF1 by 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ppl: Option<f64>,
    pub f1: f64,
    pub kf1: f64,
    pub n_examples: usize,
}

impl MetricReport {
    /// Pretty JSON with F1/KF1 on the ×100 scale.
    pub fn to_display_json(&self) -> serde_json::Value {
        serde_json::json!({
            "ppl": self.ppl.map(round1),
            "f1": round1(self.f1 * 100.0),
            "kf1": round1(self.kf1 * 100.0),
            "n_examples": self.n_examples,
        })
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>8} {:>8} {:>8} {:>10}",
            "PPL", "F1", "KF1", "examples"
        )?;
        let ppl = self
            .ppl
            .map_or_else(|| "-".to_owned(), |p| format!("{p:.1}"));
        write!(
            f,
            "{:>8} {:>8.1} {:>8.1} {:>10}",
            ppl,
            self.f1 * 100.0,
            self.kf1 * 100.0,
            self.n_examples
        )
    }
}

/// Accumulates per-turn scores into a [`MetricReport`].
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    f1_sum: f64,
    kf1_sum: f64,
    n: usize,
    kf1_n: usize,
    log_prob: f64,
    tokens: usize,
    policy: EmptyKnowledge,
}

impl MetricAccumulator {
    pub fn new(policy: EmptyKnowledge) -> Self {
        MetricAccumulator {
            policy,
            ..Default::default()
        }
    }

    pub fn add(&mut self, prediction: &str, gold: &str, selected: &[SelectedSentence]) {
        self.f1_sum += unigram_f1(prediction, gold);
        self.n += 1;
        if selected.is_empty() && self.policy == EmptyKnowledge::Skip {
            return;
        }
        self.kf1_sum += knowledge_f1(prediction, selected);
        self.kf1_n += 1;
    }

    pub fn add_log_prob(&mut self, log_prob: f64, tokens: usize) {
        self.log_prob += log_prob;
        self.tokens += tokens;
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.f1_sum += other.f1_sum;
        self.kf1_sum += other.kf1_sum;
        self.n += other.n;
        self.kf1_n += other.kf1_n;
        self.log_prob += other.log_prob;
        self.tokens += other.tokens;
    }

    pub fn report(&self) -> MetricReport {
        let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
        MetricReport {
            ppl: (self.tokens > 0).then(|| (-self.log_prob / self.tokens as f64).exp()),
            f1: mean(self.f1_sum, self.n),
            kf1: mean(self.kf1_sum, self.kf1_n),
            n_examples: self.n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion_decode::{UniformLm, Vocab};

    fn sel(s: &str) -> SelectedSentence {
        SelectedSentence {
            doc_url: "https://a.com".into(),
            sentence: s.into(),
        }
    }

    #[test]
    fn f1_examples() {
        assert_eq!(unigram_f1("the cat sat", "the cat sat"), 1.0);
        assert!((unigram_f1("a b c", "c d") - 0.4).abs() < 1e-15);
        assert_eq!(unigram_f1("", "x"), 0.0);
        assert_eq!(unigram_f1("x", ""), 0.0);
        // multiset: "a a" vs "a" -> common 1, P = 1/2, R = 1
        assert!((unigram_f1("a a", "a") - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kf1_examples() {
        let s = [sel("Nadal has won 22 Grand Slam titles.")];
        assert_eq!(knowledge_f1("Nadal has won 22 Grand Slam titles.", &s), 1.0);
        assert_eq!(knowledge_f1("anything", &[]), 0.0);
        let s = [sel("one two three four")];
        assert!((knowledge_f1("one two", &s) - 2.0 / 3.0).abs() < 1e-15);
        let two = [sel("one two."), sel("three")];
        assert_eq!(knowledge_text(&two), "one two. three");
    }

    #[test]
    fn uniform_perplexity_is_vocab_size() {
        let vocab = Vocab::from_tokens((0..134).map(|i| format!("w{i}")));
        assert_eq!(vocab.len(), 137);
        let lm = UniformLm::new(vocab);
        let ex = vec![
            ("".to_owned(), "w1 w2 w3".to_owned()),
            ("x".to_owned(), "w9".to_owned()),
        ];
        let ppl = perplexity(&lm, &ex).unwrap();
        assert!((ppl - 137.0).abs() < 1e-9, "{ppl}");
        assert_eq!(perplexity(&lm, &[]), Err(MetricsError::EmptyTargets));
    }

    #[test]
    fn report_scales_for_display() {
        let r = MetricReport {
            ppl: Some(16.27),
            f1: 0.179,
            kf1: 0.069,
            n_examples: 3,
        };
        let j = r.to_display_json();
        assert_eq!(j["f1"], 17.9);
        assert_eq!(j["kf1"], 6.9);
        assert_eq!(j["ppl"], 16.3);
        assert!(r.to_string().contains("17.9"));
    }

    #[test]
    fn skip_policy_excludes_empty_turns() {
        let mut zero = MetricAccumulator::new(EmptyKnowledge::Zero);
        let mut skip = MetricAccumulator::new(EmptyKnowledge::Skip);
        for acc in [&mut zero, &mut skip] {
            acc.add("a b", "a b", &[sel("a b")]);
            acc.add("a b", "a b", &[]);
        }
        assert_eq!(zero.report().kf1, 0.5);
        assert_eq!(skip.report().kf1, 1.0);
        assert_eq!(skip.report().n_examples, 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sentence() -> impl Strategy<Value = String> {
            proptest::collection::vec("[a-e]{1,2}", 0..12).prop_map(|w| w.join(" "))
        }

        proptest! {
            #[test]
            fn f1_bounded_and_symmetric(a in sentence(), b in sentence()) {
                let f = unigram_f1(&a, &b);
                prop_assert!((0.0..=1.0).contains(&f));
                prop_assert!((f - unigram_f1(&b, &a)).abs() < 1e-15);
                if !normalize_tokens(&a).is_empty() {
                    prop_assert_eq!(unigram_f1(&a, &a), 1.0);
                }
            }

            #[test]
            fn appending_reference_never_lowers_recall(a in sentence(), r in sentence()) {
                let base = overlap(&a, &r).recall;
                let extended = overlap(&format!("{a} {r}"), &r).recall;
                prop_assert!(extended >= base);
            }
        }
    }
}
