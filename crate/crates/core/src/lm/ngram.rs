//! Count-based n-gram model with add-α smoothing.
//!
//! For order `n` the context of position `i` is the previous `n - 1` tokens,
//! or all of them when fewer exist (no pad symbol). The smoothed conditional
//! is `(count(t) + α) / (total + α·|V|)`; an unseen context is uniform.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NextTokenDistribution, ScoringBackend, TokenId, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

#[derive(Debug)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    vocab: Vocabulary,
    counts: HashMap<Vec<TokenId>, ContextCounts>,
    model_id: OnceLock<String>,
}

impl Clone for NGramModel {
    fn clone(&self) -> Self {
        NGramModel {
            order: self.order,
            alpha: self.alpha,
            vocab: self.vocab.clone(),
            counts: self.counts.clone(),
            model_id: self.model_id.clone(),
        }
    }
}

impl PartialEq for NGramModel {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
            && self.alpha.to_bits() == other.alpha.to_bits()
            && self.vocab == other.vocab
            && self.counts == other.counts
    }
}

/// Train an order-`order` model by exact counting over `corpus`.
pub fn train_ngram(corpus: &[TokenSequence], vocab: Vocabulary, order: usize, alpha: f64) -> Result<NGramModel> {
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if order == 0 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("smoothing alpha must be positive and finite, got {alpha}")));
    }
    let mut counts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
    for (d, doc) in corpus.iter().enumerate() {
        vocab.check(doc).map_err(|e| Error::invalid(format!("document {d}: {e}")))?;
        for i in 0..doc.len() {
            let start = i.saturating_sub(order - 1);
            let entry = counts.entry(doc[start..i].to_vec()).or_default();
            entry.total += 1;
            *entry.next.entry(doc[i]).or_insert(0) += 1;
        }
    }
    Ok(NGramModel { order, alpha, vocab, counts, model_id: OnceLock::new() })
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Override the identifier reported in scores and results.
    pub fn with_model_id(self, id: impl Into<String>) -> Self {
        let model_id = OnceLock::new();
        let _ = model_id.set(id.into());
        NGramModel { model_id, ..self }
    }

    /// Raw count of `token` following exactly `context`.
    pub fn count(&self, context: &[TokenId], token: TokenId) -> u64 {
        self.counts.get(context).and_then(|c| c.next.get(&token)).copied().unwrap_or(0)
    }

    /// Total count of observations for exactly `context`.
    pub fn context_total(&self, context: &[TokenId]) -> u64 {
        self.counts.get(context).map_or(0, |c| c.total)
    }

    pub fn num_contexts(&self) -> usize {
        self.counts.len()
    }

    /// All stored `(context, token, count)` triples in sorted order.
    pub fn entries(&self) -> Vec<(Vec<TokenId>, TokenId, u64)> {
        let mut out: Vec<_> =
            self.counts.iter().flat_map(|(ctx, c)| c.next.iter().map(move |(&t, &n)| (ctx.clone(), t, n))).collect();
        out.sort();
        out
    }

    /// The stored context used to predict the token after `history`.
    fn effective_context<'a>(&self, history: &'a [TokenId]) -> &'a [TokenId] {
        let start = history.len().saturating_sub(self.order - 1);
        &history[start..]
    }

    fn logprob_given(&self, history: &[TokenId], token: TokenId) -> f64 {
        let v = self.vocab.len() as f64;
        let (count, total) = match self.counts.get(self.effective_context(history)) {
            Some(c) => (c.next.get(&token).copied().unwrap_or(0), c.total),
            None => (0, 0),
        };
        ((count as f64 + self.alpha) / (total as f64 + self.alpha * v)).ln()
    }

    pub fn next_token_logprobs(&self, context: &[TokenId]) -> Result<NextTokenDistribution> {
        self.vocab.check(context)?;
        let v = self.vocab.len();
        let ctx = self.counts.get(self.effective_context(context));
        let total = ctx.map_or(0, |c| c.total) as f64;
        let denom = total + self.alpha * v as f64;
        let floor = (self.alpha / denom).ln();
        let mut logprobs = vec![floor; v];
        if let Some(c) = ctx {
            for (&t, &n) in &c.next {
                logprobs[t as usize] = ((n as f64 + self.alpha) / denom).ln();
            }
        }
        Ok(NextTokenDistribution { logprobs })
    }

    fn sample_next<R: Rng>(&self, history: &[TokenId], rng: &mut R) -> TokenId {
        let v = self.vocab.len();
        let ctx = self.counts.get(self.effective_context(history));
        let total = ctx.map_or(0, |c| c.total) as f64;
        let mut u = rng.random::<f64>() * (total + self.alpha * v as f64);
        for t in 0..v as TokenId {
            let n = ctx.and_then(|c| c.next.get(&t)).copied().unwrap_or(0) as f64;
            let w = n + self.alpha;
            if u < w {
                return t;
            }
            u -= w;
        }
        (v - 1) as TokenId
    }

    /// Ancestral sample of `length` tokens starting from an empty history.
    pub fn sample_sequence(&self, seed: u64, length: usize) -> TokenSequence {
        let mut rng = rng_from_seed(seed);
        self.sample_with_rng(&mut rng, length)
    }

    pub fn sample_with_rng<R: Rng>(&self, rng: &mut R, length: usize) -> TokenSequence {
        let mut out = Vec::with_capacity(length);
        for _ in 0..length {
            let t = self.sample_next(&out, rng);
            out.push(t);
        }
        TokenSequence::new(out)
    }

    fn to_document(&self) -> ModelDocument {
        let counts = self
            .counts
            .iter()
            .map(|(ctx, c)| {
                let key = ctx.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",");
                let next = c.next.iter().map(|(t, n)| (t.to_string(), *n)).collect();
                (key, next)
            })
            .collect();
        ModelDocument {
            version: MODEL_FORMAT_VERSION,
            order: self.order,
            alpha: self.alpha,
            vocab: self.vocab.surfaces().to_vec(),
            counts,
        }
    }

    /// Canonical JSON encoding; identical models give identical bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(&self.to_document()).expect("model document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        let model = Self::from_document(doc)?;
        let _ = model.model_id.set(format!("ngram{}-{}", model.order, short_digest(text.as_bytes())));
        Ok(model)
    }

    fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model format version {}", doc.version)));
        }
        if doc.order == 0 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        if !(doc.alpha > 0.0 && doc.alpha.is_finite()) {
            return Err(Error::invalid(format!("smoothing alpha must be positive, got {}", doc.alpha)));
        }
        let vocab = Vocabulary::new(doc.vocab)?;
        let parse_id = |s: &str| -> Result<TokenId> {
            let t: TokenId = s.parse().map_err(|_| Error::invalid(format!("bad token id {s:?} in model counts")))?;
            if !vocab.contains(t) {
                return Err(Error::invalid(format!("token id {t} outside vocabulary in model counts")));
            }
            Ok(t)
        };
        let mut counts = HashMap::with_capacity(doc.counts.len());
        for (key, next) in doc.counts {
            let ctx: Vec<TokenId> =
                if key.is_empty() { Vec::new() } else { key.split(',').map(parse_id).collect::<Result<_>>()? };
            if ctx.len() >= doc.order {
                return Err(Error::invalid(format!("context {key:?} is longer than order {} allows", doc.order)));
            }
            let mut c = ContextCounts::default();
            for (t, n) in next {
                let t = parse_id(&t)?;
                c.total += n;
                c.next.insert(t, n);
            }
            counts.insert(ctx, c);
        }
        Ok(NGramModel { order: doc.order, alpha: doc.alpha, vocab, counts, model_id: OnceLock::new() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::report::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading model {}", path.display()), e))?;
        Self::from_json(&text)
    }
}

fn short_digest(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..6])
}

impl ScoringBackend for NGramModel {
    fn model_id(&self) -> &str {
        self.model_id.get_or_init(|| format!("ngram{}-{}", self.order, short_digest(self.to_json().as_bytes())))
    }

    fn continuation_logprobs(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        self.vocab.check(context)?;
        self.vocab.check(continuation).map_err(|e| match e {
            Error::TokenOutOfVocabulary { token, position, vocab_size } => {
                Error::TokenOutOfVocabulary { token, position: context.len() + position, vocab_size }
            }
            other => other,
        })?;
        // only the last order-1 context tokens matter
        let keep = context.len().min(self.order - 1);
        let mut history: Vec<TokenId> = Vec::with_capacity(keep + continuation.len());
        history.extend_from_slice(&context[context.len() - keep..]);
        let mut out = Vec::with_capacity(continuation.len());
        for &t in continuation {
            out.push(self.logprob_given(&history, t));
            history.push(t);
        }
        Ok(out)
    }

    fn continuation_logprobs_batch(&self, requests: &[(&[TokenId], &[TokenId])]) -> Result<Vec<Vec<f64>>> {
        requests.par_iter().map(|(ctx, cont)| self.continuation_logprobs(ctx, cont)).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    order: usize,
    alpha: f64,
    vocab: Vec<String>,
    counts: BTreeMap<String, BTreeMap<String, u64>>,
}
