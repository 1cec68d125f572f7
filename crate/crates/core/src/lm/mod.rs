//! Language-model interface and the built-in n-gram implementation.
//!
//! A model maps a token context to a distribution over the next token. The
//! rest of the crate only needs per-token log-probabilities of a
//! continuation under teacher forcing, which is what [`ScoringBackend`]
//! exposes. Both the in-process [`NGramModel`] and the HTTP client in
//! [`crate::remote`] implement it.

mod corpus;
mod ngram;
mod vocab;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use corpus::{read_documents, Corpus};
pub use ngram::{train_ngram, NGramModel, MODEL_FORMAT_VERSION};
pub use vocab::Vocabulary;

pub type TokenId = u32;

/// An ordered run of token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        TokenSequence(tokens)
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    /// `self ‖ other`.
    pub fn concat(&self, other: &[TokenId]) -> TokenSequence {
        let mut v = Vec::with_capacity(self.0.len() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(other);
        TokenSequence(v)
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(v: Vec<TokenId>) -> Self {
        TokenSequence(v)
    }
}

impl From<&[TokenId]> for TokenSequence {
    fn from(v: &[TokenId]) -> Self {
        TokenSequence(v.to_vec())
    }
}

impl<const N: usize> From<[TokenId; N]> for TokenSequence {
    fn from(v: [TokenId; N]) -> Self {
        TokenSequence(v.to_vec())
    }
}

impl FromIterator<TokenId> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        TokenSequence(iter.into_iter().collect())
    }
}

/// Natural-log probabilities over the whole vocabulary for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    pub logprobs: Vec<f64>,
}

impl NextTokenDistribution {
    pub fn logprob(&self, token: TokenId) -> f64 {
        self.logprobs[token as usize]
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.logprob(token).exp()
    }

    /// Sum of probabilities, which should be 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        let probs: Vec<f64> = self.logprobs.iter().map(|l| l.exp()).collect();
        crate::stats::pairwise_sum(&probs)
    }
}

/// Anything that can score a continuation token-by-token given a context.
///
/// Implementations must return exactly one natural-log probability per
/// continuation token, each conditioned on the context followed by the true
/// preceding continuation tokens.
pub trait ScoringBackend: Sync {
    fn model_id(&self) -> &str;

    fn continuation_logprobs(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>>;

    /// Score many independent pairs. Results are returned in request order.
    fn continuation_logprobs_batch(&self, requests: &[(&[TokenId], &[TokenId])]) -> Result<Vec<Vec<f64>>> {
        requests.iter().map(|(ctx, cont)| self.continuation_logprobs(ctx, cont)).collect()
    }
}

impl<B: ScoringBackend + ?Sized> ScoringBackend for &B {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn continuation_logprobs(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        (**self).continuation_logprobs(context, continuation)
    }

    fn continuation_logprobs_batch(&self, requests: &[(&[TokenId], &[TokenId])]) -> Result<Vec<Vec<f64>>> {
        (**self).continuation_logprobs_batch(requests)
    }
}

impl<B: ScoringBackend + ?Sized + Send> ScoringBackend for Box<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn continuation_logprobs(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        (**self).continuation_logprobs(context, continuation)
    }

    fn continuation_logprobs_batch(&self, requests: &[(&[TokenId], &[TokenId])]) -> Result<Vec<Vec<f64>>> {
        (**self).continuation_logprobs_batch(requests)
    }
}
