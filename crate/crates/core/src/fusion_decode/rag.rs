//! RAG-Token: per-token marginalization over retrieved documents.
//!
//! p(y_t | x, y_<t) = Σ_z p(z | x) · p(y_t | z, x, y_<t)

use super::lm::{TokenId, TokenLm, Vocab};
use super::DecodeError;

/// Σ_z priors[z] · dists[z].
pub fn mix_distributions(dists: &[Vec<f64>], priors: &[f64]) -> Result<Vec<f64>, DecodeError> {
    if dists.is_empty() || dists.len() != priors.len() {
        return Err(DecodeError::DimensionMismatch(format!(
            "{} distributions, {} priors",
            dists.len(),
            priors.len()
        )));
    }
    let width = dists[0].len();
    if dists.iter().any(|d| d.len() != width) {
        return Err(DecodeError::DimensionMismatch(
            "distributions differ in length".into(),
        ));
    }
    let mut out = vec![0.0; width];
    for (dist, &w) in dists.iter().zip(priors) {
        for (o, &p) in out.iter_mut().zip(dist) {
            *o += w * p;
        }
    }
    Ok(out)
}

/// Mixture next-token distribution for one prefix, with each document's
/// conditioning fed to the same model.
pub fn rag_token_dist(
    lm: &dyn TokenLm,
    doc_conditionings: &[Vec<TokenId>],
    priors: &[f64],
    prefix: &[TokenId],
) -> Result<Vec<f64>, DecodeError> {
    if doc_conditionings.len() != priors.len() || priors.is_empty() {
        return Err(DecodeError::DimensionMismatch(format!(
            "{} documents, {} priors",
            doc_conditionings.len(),
            priors.len()
        )));
    }
    let dists: Vec<Vec<f64>> = doc_conditionings
        .iter()
        .map(|c| lm.next_dist(c, prefix))
        .collect();
    mix_distributions(&dists, priors)
}

/// A [`TokenLm`] view that marginalizes over fixed documents; the
/// conditioning passed to `next_dist` is ignored.
pub struct RagTokenLm<'a> {
    lm: &'a dyn TokenLm,
    doc_conditionings: Vec<Vec<TokenId>>,
    priors: Vec<f64>,
}

impl<'a> RagTokenLm<'a> {
    pub fn new(
        lm: &'a dyn TokenLm,
        doc_conditionings: Vec<Vec<TokenId>>,
        priors: Vec<f64>,
    ) -> Result<Self, DecodeError> {
        if doc_conditionings.len() != priors.len() || priors.is_empty() {
            return Err(DecodeError::DimensionMismatch(format!(
                "{} documents, {} priors",
                doc_conditionings.len(),
                priors.len()
            )));
        }
        Ok(RagTokenLm {
            lm,
            doc_conditionings,
            priors,
        })
    }
}

impl TokenLm for RagTokenLm<'_> {
    fn vocab(&self) -> &Vocab {
        self.lm.vocab()
    }

    fn next_dist(&self, _conditioning: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        rag_token_dist(self.lm, &self.doc_conditionings, &self.priors, prefix)
            .expect("lengths checked at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta(i: usize, n: usize) -> Vec<f64> {
        let mut d = vec![0.0; n];
        d[i] = 1.0;
        d
    }

    #[test]
    fn single_document_is_identity() {
        let d = vec![0.1, 0.2, 0.7];
        assert_eq!(
            mix_distributions(std::slice::from_ref(&d), &[1.0]).unwrap(),
            d
        );
    }

    #[test]
    fn linear_in_priors() {
        let m = mix_distributions(&[delta(0, 3), delta(1, 3)], &[0.5, 0.5]).unwrap();
        assert_eq!(m, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(mix_distributions(&[delta(0, 3)], &[0.5, 0.5]).is_err());
        assert!(mix_distributions(&[], &[]).is_err());
        assert!(mix_distributions(&[delta(0, 3), delta(0, 2)], &[0.5, 0.5]).is_err());
    }
}
