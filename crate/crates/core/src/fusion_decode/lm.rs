//! Token language models behind generation and perplexity.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::text::normalize_tokens;

use super::DecodeError;

pub type TokenId = u32;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Token table. Ids 0, 1, 2 are BOS, EOS and UNK; the rest are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let specials = [BOS, EOS, UNK];
        let rest: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| !specials.contains(&t.as_str()))
            .collect();
        let tokens: Vec<String> = specials
            .iter()
            .map(|s| (*s).to_owned())
            .chain(rest)
            .collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        0
    }

    pub fn eos(&self) -> TokenId {
        1
    }

    pub fn unk(&self) -> TokenId {
        2
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(self.unk())
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    /// Normalized tokens of `text` mapped to ids; unknown words become UNK.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        normalize_tokens(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Next-token distribution given the encoded conditioning (knowledge and
/// dialogue context) and the tokens generated so far.
pub trait TokenLm: Send + Sync {
    fn vocab(&self) -> &Vocab;
    fn next_dist(&self, conditioning: &[TokenId], prefix: &[TokenId]) -> Vec<f64>;
}

impl<L: TokenLm + ?Sized> TokenLm for Arc<L> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn next_dist(&self, conditioning: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        (**self).next_dist(conditioning, prefix)
    }
}

#[derive(Debug, Clone)]
pub struct UniformLm {
    vocab: Vocab,
}

impl UniformLm {
    pub fn new(vocab: Vocab) -> Self {
        UniformLm { vocab }
    }
}

impl TokenLm for UniformLm {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_dist(&self, _conditioning: &[TokenId], _prefix: &[TokenId]) -> Vec<f64> {
        vec![1.0 / self.vocab.len() as f64; self.vocab.len()]
    }
}

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

/// Add-k smoothed n-gram model with backoff to shorter contexts.
///
/// P(w | ctx) = (c(ctx, w) + k) / (c(ctx) + k·|V|) for the longest suffix of the
/// BOS-padded history whose count c(ctx) is non-zero; the empty context
/// (unigram) always qualifies. Every level is normalized on its own, so each
/// returned distribution sums to one and is strictly positive.
#[derive(Debug, Clone)]
pub struct NgramLm {
    vocab: Vocab,
    order: usize,
    k: f64,
    /// `levels[n]` holds contexts of length `n`.
    levels: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

impl NgramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Counts for the longest usable context, plus that context's length.
    fn backoff(&self, prefix: &[TokenId]) -> (&ContextCounts, usize) {
        let pad = self.order - 1;
        let mut history: Vec<TokenId> = vec![self.vocab.bos(); pad.saturating_sub(prefix.len())];
        history.extend_from_slice(&prefix[prefix.len().saturating_sub(pad)..]);
        for len in (1..=pad).rev() {
            let ctx = &history[history.len() - len..];
            if let Some(c) = self.levels[len].get(ctx) {
                if c.total > 0 {
                    return (c, len);
                }
            }
        }
        (&self.levels[0][&Vec::new()], 0)
    }

    /// Length of the context actually used for the next token.
    pub fn context_len_used(&self, prefix: &[TokenId]) -> usize {
        self.backoff(prefix).1
    }
}

impl TokenLm for NgramLm {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_dist(&self, _conditioning: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let (counts, _) = self.backoff(prefix);
        let v = self.vocab.len() as f64;
        let denom = counts.total as f64 + self.k * v;
        let mut dist = vec![self.k / denom; self.vocab.len()];
        for (&w, &c) in &counts.next {
            dist[w as usize] = (c as f64 + self.k) / denom;
        }
        dist
    }
}

/// Trains an [`NgramLm`] on normalized whitespace tokens.
pub fn train_ngram_lm<S: AsRef<str>>(
    texts: &[S],
    order: usize,
    k: f64,
) -> Result<NgramLm, DecodeError> {
    if order < 1 {
        return Err(DecodeError::InvalidParams(
            "order must be at least 1".into(),
        ));
    }
    if k.is_nan() || k <= 0.0 {
        return Err(DecodeError::InvalidParams(
            "smoothing k must be positive".into(),
        ));
    }
    let sentences: Vec<Vec<String>> = texts
        .iter()
        .map(|t| normalize_tokens(t.as_ref()))
        .filter(|t| !t.is_empty())
        .collect();
    if sentences.is_empty() {
        return Err(DecodeError::EmptyCorpus);
    }
    let vocab = Vocab::from_tokens(sentences.iter().flatten().cloned());
    let pad = order - 1;
    let mut levels: Vec<HashMap<Vec<TokenId>, ContextCounts>> = vec![HashMap::new(); order];
    levels[0].insert(Vec::new(), ContextCounts::default());
    for sentence in &sentences {
        let mut seq = vec![vocab.bos(); pad];
        seq.extend(sentence.iter().map(|t| vocab.id(t)));
        seq.push(vocab.eos());
        for i in pad..seq.len() {
            let w = seq[i];
            for (len, level) in levels.iter_mut().enumerate() {
                let entry = level.entry(seq[i - len..i].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(w).or_default() += 1;
            }
        }
    }
    Ok(NgramLm {
        vocab,
        order,
        k,
        levels,
    })
}

/// Interpolates a base model with a unigram cache over the conditioning
/// tokens: P = (1 − λ)·P_base + λ·c(w in conditioning)/|conditioning|.
///
/// This is how the toy pipeline lets retrieved knowledge influence output.
pub struct CacheMixLm {
    base: Arc<dyn TokenLm>,
    weight: f64,
}

impl CacheMixLm {
    pub fn new(base: Arc<dyn TokenLm>, weight: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&weight),
            "cache weight must be in [0, 1]"
        );
        CacheMixLm { base, weight }
    }
}

impl TokenLm for CacheMixLm {
    fn vocab(&self) -> &Vocab {
        self.base.vocab()
    }

    fn next_dist(&self, conditioning: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let mut dist = self.base.next_dist(conditioning, prefix);
        let vocab = self.vocab();
        let usable: Vec<TokenId> = conditioning
            .iter()
            .copied()
            .filter(|&t| t != vocab.bos() && t != vocab.eos() && t != vocab.unk())
            .collect();
        if usable.is_empty() || self.weight == 0.0 {
            return dist;
        }
        for p in dist.iter_mut() {
            *p *= 1.0 - self.weight;
        }
        let share = self.weight / usable.len() as f64;
        for t in usable {
            dist[t as usize] += share;
        }
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum(d: &[f64]) -> f64 {
        d.iter().sum()
    }

    #[test]
    fn bigram_hand_count() {
        let k = 0.5;
        let lm = train_ngram_lm(&["a b a b"], 2, k).unwrap();
        // V = {<s>, </s>, <unk>, a, b}
        assert_eq!(lm.vocab().len(), 5);
        let a = lm.vocab().id("a");
        let b = lm.vocab().id("b");
        let d = lm.next_dist(&[], &[a]);
        assert!((d[b as usize] - (2.0 + k) / (2.0 + k * 5.0)).abs() < 1e-15);
        assert!((sum(&d) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unseen_context_backs_off_to_unigram() {
        let lm = train_ngram_lm(&["a b a b", "c"], 2, 1.0).unwrap();
        let c = lm.vocab().id("c");
        // "c" is only ever followed by EOS; "</s>" as context is never counted
        let eos = lm.vocab().eos();
        assert_eq!(lm.context_len_used(&[c]), 1);
        assert_eq!(lm.context_len_used(&[eos]), 0);
        let uni = lm.next_dist(&[], &[eos]);
        // unigram counts: a2 b2 c1 eos2 -> N = 7, |V| = 6
        let a = lm.vocab().id("a");
        assert!((uni[a as usize] - 3.0 / 13.0).abs() < 1e-15);
    }

    #[test]
    fn trigram_distributions_normalize() {
        let lm = train_ngram_lm(&["the cat sat on the mat", "the dog sat"], 3, 0.1).unwrap();
        for prefix in [vec![], vec![3], vec![3, 4], vec![7, 7, 7]] {
            let d = lm.next_dist(&[], &prefix);
            assert!((sum(&d) - 1.0).abs() < 1e-9);
            assert!(d.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn train_errors() {
        assert!(matches!(
            train_ngram_lm(&["  ", "!!"], 3, 1.0),
            Err(DecodeError::EmptyCorpus)
        ));
        assert!(train_ngram_lm(&["a"], 0, 1.0).is_err());
        assert!(train_ngram_lm(&["a"], 2, 0.0).is_err());
    }

    #[test]
    fn cache_mix_shifts_mass_to_conditioning() {
        let base: Arc<dyn TokenLm> = Arc::new(train_ngram_lm(&["a b c d"], 2, 1.0).unwrap());
        let lm = CacheMixLm::new(base.clone(), 0.5);
        let d = lm.vocab().id("d");
        let mixed = lm.next_dist(&[d, d], &[]);
        let plain = base.next_dist(&[], &[]);
        assert!(mixed[d as usize] > plain[d as usize]);
        assert!((sum(&mixed) - 1.0).abs() < 1e-12);
        assert_eq!(lm.next_dist(&[], &[]), plain);
    }

    #[test]
    fn vocab_encoding() {
        let v = Vocab::from_tokens(["b", "a", "a"]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.encode("A, b zz"), vec![3, 4, 2]);
        assert_eq!(v.decode(&[3, 4]), "a b");
    }
}
