//! Beam search with a minimum length and n-gram blocking inside the response.
//!
//! Hypotheses are scored by their summed natural-log probability with no
//! length normalization. Candidate order is (higher score, lower token id,
//! lower beam index), which makes decoding bit-reproducible.

use std::cmp::Ordering;

use super::lm::TokenId;
use super::{DecodeError, GenerationParams};

/// Tokens the decoder treats specially.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Specials {
    pub eos: TokenId,
    /// Never generated (BOS, UNK).
    pub banned: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    score: f64,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    token: TokenId,
    beam: usize,
}

fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.token.cmp(&b.token))
        .then(a.beam.cmp(&b.beam))
}

/// Tokens that would complete an `n`-gram already present in `tokens`.
pub fn blocked_tokens(tokens: &[TokenId], n: usize) -> Vec<TokenId> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    let suffix = &tokens[tokens.len() + 1 - n..];
    (0..=tokens.len() - n)
        .filter(|&j| tokens[j..j + n - 1] == *suffix)
        .map(|j| tokens[j + n - 1])
        .collect()
}

/// Applies the decoding constraints to a next-token distribution in place.
pub fn apply_masks(
    dist: &mut [f64],
    prefix: &[TokenId],
    params: &GenerationParams,
    specials: &Specials,
) {
    for &t in &specials.banned {
        if let Some(p) = dist.get_mut(t as usize) {
            *p = 0.0;
        }
    }
    if prefix.len() < params.min_len {
        dist[specials.eos as usize] = 0.0;
    }
    for t in blocked_tokens(prefix, params.block_ngram) {
        dist[t as usize] = 0.0;
    }
}

/// Decodes one response. `lm_step` maps the generated prefix to a
/// next-token distribution; the returned tokens exclude EOS.
pub fn beam_search<F>(
    mut lm_step: F,
    params: &GenerationParams,
    specials: &Specials,
) -> Result<Vec<TokenId>, DecodeError>
where
    F: FnMut(&[TokenId]) -> Vec<f64>,
{
    params.validate()?;
    let mut active = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..params.max_len {
        let mut candidates: Vec<Candidate> = Vec::new();
        for (beam, hyp) in active.iter().enumerate() {
            let mut dist = lm_step(&hyp.tokens);
            apply_masks(&mut dist, &hyp.tokens, params, specials);
            let mut local: Vec<Candidate> = dist
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(t, &p)| Candidate {
                    score: hyp.score + p.ln(),
                    token: t as TokenId,
                    beam,
                })
                .collect();
            if local.is_empty() {
                // everything blocked: stop here if long enough, else drop the beam
                if hyp.tokens.len() >= params.min_len {
                    finished.push(hyp.clone());
                }
                continue;
            }
            // the global top-k never takes more than k from one beam
            local.sort_by(candidate_order);
            local.truncate(params.beam_size);
            candidates.extend(local);
        }
        if candidates.is_empty() {
            active.clear();
            break;
        }
        candidates.sort_by(candidate_order);
        candidates.truncate(params.beam_size);

        let mut next = Vec::with_capacity(params.beam_size);
        for c in candidates {
            let parent = &active[c.beam];
            if c.token == specials.eos {
                finished.push(Hypothesis {
                    tokens: parent.tokens.clone(),
                    score: c.score,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(c.token);
                next.push(Hypothesis {
                    tokens,
                    score: c.score,
                });
            }
        }
        active = next;
        if active.is_empty() {
            break;
        }
        // log-probabilities are non-positive, so active scores only fall
        let best_active = active
            .iter()
            .map(|h| h.score)
            .fold(f64::NEG_INFINITY, f64::max);
        if finished.iter().any(|h| h.score >= best_active) {
            break;
        }
    }
    // length cap reached
    finished.extend(
        active
            .into_iter()
            .filter(|h| h.tokens.len() >= params.min_len),
    );

    finished
        .into_iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.score.total_cmp(&b.score).then(j.cmp(i)))
        .map(|(_, h)| h.tokens)
        .ok_or(DecodeError::NoValidContinuation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(beam: usize, min_len: usize, block: usize, max_len: usize) -> GenerationParams {
        GenerationParams {
            beam_size: beam,
            min_len,
            block_ngram: block,
            max_len,
            seed: 0,
        }
    }

    const EOS: TokenId = 1;

    fn specials() -> Specials {
        Specials {
            eos: EOS,
            banned: vec![0, 2],
        }
    }

    /// Vocab of 6: 0 BOS, 1 EOS, 2 UNK, 3 a, 4 b, 5 c. Strongly prefers the
    /// next token of the cycle a b c a b c, then the others in id order.
    fn cycling(prefix: &[TokenId]) -> Vec<f64> {
        let next = match prefix.last() {
            None | Some(5) => 3,
            Some(&t) => t + 1,
        };
        let mut d = vec![0.02; 6];
        d[next as usize] = 0.9;
        d
    }

    #[test]
    fn blocking_finds_repeated_trigram_continuations() {
        assert_eq!(blocked_tokens(&[3, 4, 5, 3, 4], 3), vec![5]);
        assert_eq!(blocked_tokens(&[3, 4], 3), Vec::<TokenId>::new());
        assert_eq!(blocked_tokens(&[3, 3], 2), vec![3]);
        assert_eq!(blocked_tokens(&[3, 4], 1), vec![3, 4]);
        assert!(blocked_tokens(&[3, 4, 5, 3, 4], 0).is_empty());
    }

    #[test]
    fn cycle_is_broken_by_trigram_block() {
        let out = beam_search(cycling, &params(1, 6, 3, 6), &specials()).unwrap();
        // after a b c a b, c is blocked and EOS is masked below min_len,
        // so the tie between a and b goes to the lower id
        assert_eq!(&out[..5], &[3, 4, 5, 3, 4]);
        assert_ne!(out[5], 5);
        assert_eq!(out[5], 3);
        for w in 0..out.len().saturating_sub(2) {
            for v in (w + 1)..out.len() - 2 {
                assert_ne!(out[w..w + 3], out[v..v + 3]);
            }
        }
    }

    #[test]
    fn min_len_masks_early_eos() {
        let eager = |_: &[TokenId]| {
            let mut d = vec![0.01; 6];
            d[EOS as usize] = 0.95;
            d
        };
        let out = beam_search(eager, &params(3, 20, 0, 40), &specials()).unwrap();
        assert_eq!(out.len(), 20);
        let out = beam_search(eager, &params(3, 0, 0, 40), &specials()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn fully_blocked_below_min_len_is_an_error() {
        // unigram blocking over 3 usable tokens cannot reach length 5
        let flat = |_: &[TokenId]| vec![1.0 / 6.0; 6];
        assert_eq!(
            beam_search(flat, &params(2, 5, 1, 10), &specials()),
            Err(DecodeError::NoValidContinuation)
        );
        // but emits EOS once the minimum is met
        let out = beam_search(flat, &params(2, 3, 1, 10), &specials()).unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn wider_beam_finds_better_sequence() {
        // greedy: a (.6) -> c (.5) -> EOS (.5) = .15; beam 2 finds b -> EOS = .4
        let lm = |prefix: &[TokenId]| -> Vec<f64> {
            let mut d = vec![0.0; 6];
            match prefix {
                [] => {
                    d[3] = 0.6;
                    d[4] = 0.4;
                }
                [3] => {
                    d[EOS as usize] = 0.3;
                    d[5] = 0.5;
                }
                [3, 5] => d[EOS as usize] = 0.5,
                _ => d[EOS as usize] = 1.0,
            }
            d
        };
        let p = params(1, 0, 0, 5);
        assert_eq!(beam_search(lm, &p, &specials()).unwrap(), vec![3, 5]);
        let p = params(2, 0, 0, 5);
        assert_eq!(beam_search(lm, &p, &specials()).unwrap(), vec![4]);
    }
}
