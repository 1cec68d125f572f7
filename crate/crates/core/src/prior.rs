//! Monte-Carlo estimation of the suffix prior `P(s)`.
//!
//! The prior is the probability of generating `s` averaged over prefixes
//! drawn from a reference distribution. Here that distribution is uniform
//! over contiguous `prefix_length`-token windows of a corpus, and the
//! estimator averages `P(s | q_i)` over `c` i.i.d. window draws:
//!
//! ```text
//! v_hat = (1/c) * sum_i P(s | q_i)
//! ```
//!
//! Each term lies in `[0, 1]`, so `Var[v_hat] = Var[P(s|q)] / c <= 1/(4c)`.
//! [`brute_force_prior`] integrates over the exact same window distribution
//! and is the oracle the estimator is tested against.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lm::{ScoringBackend, TokenId, TokenSequence};
use crate::seed::{derive_seed, rng_from_seed};
use crate::stats::{pairwise_sum, sample_variance};

/// Default number of prefix samples per trial.
pub const DEFAULT_SAMPLES: usize = 5000;
/// Default number of independent trials.
pub const DEFAULT_TRIALS: usize = 5;
/// Default cap on distinct windows the exact oracle will enumerate.
pub const DEFAULT_ORACLE_BUDGET: usize = 1_000_000;

/// Uniform sampler over every `(document, offset)` window of a corpus.
#[derive(Debug, Clone)]
pub struct PrefixSampler {
    corpus: Arc<Vec<TokenSequence>>,
    prefix_length: usize,
    seed: u64,
    /// `cumulative[d]` = number of windows in documents `0..=d`.
    cumulative: Vec<usize>,
}

impl PrefixSampler {
    pub fn new(corpus: Arc<Vec<TokenSequence>>, prefix_length: usize, seed: u64) -> Result<Self> {
        if prefix_length == 0 {
            return Err(Error::invalid("prefix length must be positive"));
        }
        let mut cumulative = Vec::with_capacity(corpus.len());
        let mut total = 0usize;
        for doc in corpus.iter() {
            total += (doc.len() + 1).saturating_sub(prefix_length);
            cumulative.push(total);
        }
        if total == 0 {
            return Err(Error::invalid(format!("sampler corpus has no window of {prefix_length} tokens")));
        }
        Ok(PrefixSampler { corpus, prefix_length, seed, cumulative })
    }

    /// Same corpus and seed, different window length.
    pub fn with_prefix_length(&self, prefix_length: usize) -> Result<Self> {
        if prefix_length == self.prefix_length {
            return Ok(self.clone());
        }
        Self::new(Arc::clone(&self.corpus), prefix_length, self.seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PrefixSampler { seed, ..self.clone() }
    }

    pub fn prefix_length(&self) -> usize {
        self.prefix_length
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn corpus(&self) -> &Arc<Vec<TokenSequence>> {
        &self.corpus
    }

    pub fn window_count(&self) -> usize {
        *self.cumulative.last().unwrap_or(&0)
    }

    /// The `index`-th window in (document, offset) order.
    pub fn window(&self, index: usize) -> &[TokenId] {
        assert!(index < self.window_count(), "window index out of range");
        let doc = self.cumulative.partition_point(|&c| c <= index);
        let before = if doc == 0 { 0 } else { self.cumulative[doc - 1] };
        let offset = index - before;
        &self.corpus[doc][offset..offset + self.prefix_length]
    }

    pub fn windows(&self) -> impl Iterator<Item = &[TokenId]> + '_ {
        self.corpus.iter().flat_map(move |doc| doc.windows(self.prefix_length))
    }

    /// Independent random stream for trial `trial`.
    pub fn trial_rng(&self, trial: usize) -> ChaCha8Rng {
        rng_from_seed(derive_seed(self.seed, &format!("prior-trial-{trial}")))
    }

    pub fn draw<'a, R: Rng>(&'a self, rng: &mut R) -> &'a [TokenId] {
        let index = rng.random_range(0..self.window_count());
        self.window(index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEstimate {
    pub v_hat: f64,
    pub c: usize,
    /// Per-trial means.
    pub trials: Vec<f64>,
    /// Unbiased variance of the individual `P(s | q_i)` over all draws.
    pub sample_variance: f64,
    pub popoviciu_bound: f64,
    pub suffix_id: String,
    pub model_id: String,
}

impl PriorEstimate {
    pub fn log_v_hat(&self) -> f64 {
        self.v_hat.ln()
    }

    pub fn with_suffix_id(mut self, id: impl Into<String>) -> Self {
        self.suffix_id = id.into();
        self
    }

    /// Three standard deviations of the estimator under the worst-case bound.
    pub fn monte_carlo_margin(&self) -> f64 {
        3.0 * self.popoviciu_bound.sqrt()
    }
}

/// Short stable identifier for a suffix.
pub fn suffix_digest(suffix: &[TokenId]) -> String {
    let mut h = Sha256::new();
    for t in suffix {
        h.update(t.to_le_bytes());
    }
    format!("s-{}", hex::encode(&h.finalize()[..6]))
}

/// `1 / (4c)`: the worst-case variance of a mean of `c` draws from `[0, 1]`.
pub fn variance_bound(c: usize) -> f64 {
    assert!(c >= 1, "sample count must be at least 1");
    1.0 / (4.0 * c as f64)
}

fn sample_probabilities<B: ScoringBackend + ?Sized>(
    backend: &B,
    suffix: &[TokenId],
    prefixes: &[&[TokenId]],
) -> Result<Vec<f64>> {
    let requests: Vec<(&[TokenId], &[TokenId])> = prefixes.iter().map(|p| (*p, suffix)).collect();
    let scored = backend.continuation_logprobs_batch(&requests)?;
    scored
        .into_iter()
        .map(|lps| {
            if let Some((index, &value)) = lps.iter().enumerate().find(|(_, v)| !v.is_finite() || **v > 0.0) {
                return Err(Error::InvalidLogprob { index, value });
            }
            Ok(pairwise_sum(&lps).exp())
        })
        .collect()
}

/// Monte-Carlo estimate of `P(s)` from `trials` runs of `c` window draws.
pub fn estimate_prior<B: ScoringBackend + ?Sized>(
    backend: &B,
    suffix: &[TokenId],
    sampler: &PrefixSampler,
    c: usize,
    trials: usize,
) -> Result<PriorEstimate> {
    if c == 0 {
        return Err(Error::invalid("sample count c must be at least 1"));
    }
    if trials == 0 {
        return Err(Error::invalid("trial count must be at least 1"));
    }
    if suffix.is_empty() {
        return Err(Error::invalid("cannot estimate the prior of an empty suffix"));
    }
    let suffix_id = suffix_digest(suffix);
    let mut trial_means = Vec::with_capacity(trials);
    let mut all = Vec::with_capacity(c * trials);
    for trial in 0..trials {
        let mut rng = sampler.trial_rng(trial);
        let prefixes: Vec<&[TokenId]> = (0..c).map(|_| sampler.draw(&mut rng)).collect();
        let probs = sample_probabilities(backend, suffix, &prefixes).map_err(|e| Error::TrialAborted {
            suffix_id: suffix_id.clone(),
            trial,
            source: Box::new(e),
        })?;
        trial_means.push(pairwise_sum(&probs) / c as f64);
        all.extend(probs);
    }
    // equal c per trial, so pooling is the mean of trial means
    let v_hat = (pairwise_sum(&trial_means) / trials as f64).clamp(0.0, 1.0);
    Ok(PriorEstimate {
        v_hat,
        c,
        trials: trial_means,
        sample_variance: sample_variance(&all),
        popoviciu_bound: variance_bound(c),
        suffix_id,
        model_id: backend.model_id().to_string(),
    })
}

/// Sampling settings shared by audits, calibration and the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub c: usize,
    pub trials: usize,
    /// Sampled prefix length. `None` uses each target's own prefix length.
    #[serde(default)]
    pub prefix_length: Option<usize>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { c: DEFAULT_SAMPLES, trials: DEFAULT_TRIALS, prefix_length: None }
    }
}

/// Estimate the prior of `target.suffix` with a sampler matched to the
/// target: window length from `config` (or the target prefix) and a seed
/// derived from the sampler seed and the target id.
pub fn estimate_target_prior<B: ScoringBackend + ?Sized>(
    backend: &B,
    target: &crate::likelihood::Target,
    sampler: &PrefixSampler,
    config: &PriorConfig,
) -> Result<PriorEstimate> {
    let len = config.prefix_length.unwrap_or(target.prefix.len());
    let sampler =
        sampler.with_prefix_length(len)?.with_seed(derive_seed(sampler.seed(), &format!("target:{}", target.id)));
    Ok(estimate_prior(backend, &target.suffix, &sampler, config.c, config.trials)?.with_suffix_id(&target.id))
}

/// Exact prior under the sampler's window distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePrior {
    /// `sum_p P(s | p) * P(p)`.
    pub v_s: f64,
    /// Exact `Var[P(s | p)]` under the same distribution.
    pub per_prefix_variance: f64,
    /// Number of distinct windows.
    pub support: usize,
    pub total_windows: usize,
}

/// Enumerate every distinct window with its multiplicity and integrate
/// `P(s | p)` exactly. Fails with [`Error::OracleUnavailable`] when the
/// support exceeds `budget`.
pub fn prior_oracle<B: ScoringBackend + ?Sized>(
    backend: &B,
    suffix: &[TokenId],
    sampler: &PrefixSampler,
    budget: usize,
) -> Result<OraclePrior> {
    let mut multiplicity: HashMap<&[TokenId], usize> = HashMap::new();
    for w in sampler.windows() {
        *multiplicity.entry(w).or_insert(0) += 1;
        if multiplicity.len() > budget {
            return Err(Error::OracleUnavailable { support: multiplicity.len(), budget });
        }
    }
    let mut support: Vec<(&[TokenId], usize)> = multiplicity.into_iter().collect();
    support.sort_unstable();
    let total = sampler.window_count() as f64;
    let prefixes: Vec<&[TokenId]> = support.iter().map(|(w, _)| *w).collect();
    let probs = sample_probabilities(backend, suffix, &prefixes)?;
    let weighted: Vec<f64> = probs.iter().zip(&support).map(|(p, (_, m))| p * *m as f64 / total).collect();
    let v_s = pairwise_sum(&weighted);
    let sq: Vec<f64> =
        probs.iter().zip(&support).map(|(p, (_, m))| (p - v_s) * (p - v_s) * *m as f64 / total).collect();
    Ok(OraclePrior {
        v_s,
        per_prefix_variance: pairwise_sum(&sq),
        support: support.len(),
        total_windows: sampler.window_count(),
    })
}

/// Exact `P(s)` over the sampler's windows, with the default budget.
pub fn brute_force_prior<B: ScoringBackend + ?Sized>(
    backend: &B,
    suffix: &[TokenId],
    sampler: &PrefixSampler,
) -> Result<f64> {
    prior_oracle(backend, suffix, sampler, DEFAULT_ORACLE_BUDGET).map(|o| o.v_s)
}
